//! Independent reference implementations and fixtures shared by the
//! integration tests. The oracles deliberately avoid the library's own code
//! paths: plain whitespace splitting, linear scans instead of hash maps, and
//! formulas written out term by term.

#![allow(dead_code)]

pub mod checks;

use rand::seq::IndexedRandom;
use rand::Rng;
use unicode_normalization::UnicodeNormalization;

use chorus_core::provider::{MockRule, MockScript};

pub const EPS: f64 = 0.1;

fn ngrams(tokens: &[&str], n: usize) -> Vec<Vec<String>> {
    let mut out = Vec::new();
    if tokens.len() >= n {
        for i in 0..=tokens.len() - n {
            out.push(tokens[i..i + n].iter().map(|t| t.to_string()).collect());
        }
    }
    out
}

fn occurrences(list: &[Vec<String>], gram: &[String]) -> u64 {
    list.iter().filter(|g| g.as_slice() == gram).count() as u64
}

/// Corpus BLEU by brute-force n-gram counting over whitespace tokens, with
/// max order 4 and the 0.1 smoothing numerator. An order with no hypothesis
/// n-grams at all counts as precision `EPS`.
pub fn bleu_oracle(hyps: &[String], refs: &[String]) -> f64 {
    let mut matches = [0u64; 4];
    let mut totals = [0u64; 4];
    let mut hyp_len = 0u64;
    let mut ref_len = 0u64;
    for (h, r) in hyps.iter().zip(refs) {
        let ht: Vec<&str> = h.split_whitespace().collect();
        let rt: Vec<&str> = r.split_whitespace().collect();
        hyp_len += ht.len() as u64;
        ref_len += rt.len() as u64;
        for n in 1..=4 {
            let hg = ngrams(&ht, n);
            let rg = ngrams(&rt, n);
            totals[n - 1] += hg.len() as u64;
            let mut distinct: Vec<Vec<String>> = Vec::new();
            for g in &hg {
                if !distinct.contains(g) {
                    distinct.push(g.clone());
                }
            }
            for g in &distinct {
                matches[n - 1] += occurrences(&hg, g).min(occurrences(&rg, g));
            }
        }
    }
    if matches[0] == 0 {
        return 0.0;
    }
    let mut log_p = Vec::new();
    for n in 0..4 {
        let p = if matches[n] > 0 {
            matches[n] as f64 / totals[n] as f64
        } else if totals[n] > 0 {
            EPS / totals[n] as f64
        } else {
            EPS
        };
        log_p.push(p.ln());
    }
    let mean = log_p.iter().sum::<f64>() / 4.0;
    let bp = if hyp_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    bp * mean.exp()
}

/// Dice over character-trigram multisets, matching trigrams by removing them
/// one at a time from a copy of the other side.
pub fn dice_oracle(a: &str, b: &str) -> f64 {
    let norm = |s: &str| -> Vec<char> {
        let lowered: String = s.nfc().collect::<String>().to_lowercase();
        let words: Vec<&str> = lowered.split_whitespace().collect();
        words.join(" ").chars().collect()
    };
    let a = norm(a);
    let b = norm(b);
    if a.len() < 3 || b.len() < 3 {
        return if a == b { 1.0 } else { 0.0 };
    }
    let tri = |c: &[char]| -> Vec<(char, char, char)> {
        (0..c.len() - 2).map(|i| (c[i], c[i + 1], c[i + 2])).collect()
    };
    let ta = tri(&a);
    let mut tb = tri(&b);
    let total = ta.len() + tb.len();
    let mut shared = 0;
    for t in &ta {
        if let Some(pos) = tb.iter().position(|x| x == t) {
            tb.remove(pos);
            shared += 1;
        }
    }
    2.0 * shared as f64 / total as f64
}

pub fn random_sentence<R: Rng>(rng: &mut R, vocab: &[&str], max_len: usize) -> String {
    let len = rng.random_range(0..=max_len);
    (0..len)
        .map(|_| *vocab.choose(rng).unwrap())
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn random_text<R: Rng>(rng: &mut R, max_len: usize) -> String {
    const ALPHABET: &[char] = &[
        'a', 'b', 'c', 'a', 'b', 'A', 'B', ' ', ' ', '\t', 'é', 'e', '\u{301}', 'ß', 'z', 'ñ',
    ];
    let len = rng.random_range(0..=max_len);
    (0..len).map(|_| *ALPHABET.choose(rng).unwrap()).collect()
}

/// Mock script where every structured role answers validly: the router picks
/// `dims`, agents and the editor return fixed translations, and anything
/// else (zero-shot prompts) echoes.
pub fn protocol_script(dims: &[&str]) -> MockScript {
    let labels: Vec<String> = dims.iter().map(|d| format!("\"{d}\"")).collect();
    MockScript::echo()
        .rule(
            MockRule::text(
                "",
                format!(r#"{{"dimensions":[{}],"rationale":"scripted"}}"#, labels.join(",")),
            )
            .for_tag("router"),
        )
        .rule(
            MockRule::text("", r#"{"translation":"agent text","explanation":"scripted"}"#)
                .for_tag("agent:"),
        )
        .rule(
            MockRule::text("", r#"{"translation":"revised text","explanation":"scripted"}"#)
                .for_tag("revise:"),
        )
        .rule(
            MockRule::text("", r#"{"translation":"editor text","explanation":"scripted"}"#)
                .for_tag("editor"),
        )
        .rule(
            MockRule::text("", r#"{"critique":"fine","translation":"refined text"}"#)
                .for_tag("self_refine:refine"),
        )
}
