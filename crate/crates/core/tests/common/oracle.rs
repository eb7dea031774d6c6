//! Naive metric implementations written without reference to the library code.
//! Inputs are whitespace-separated lowercase words, so tokenizing is a split.

use std::collections::HashMap;

pub fn words(s: &str) -> Vec<&str> {
    s.split_whitespace().collect()
}

fn grams<'a>(toks: &[&'a str], n: usize) -> Vec<String> {
    if toks.len() < n {
        return vec![];
    }
    (0..=toks.len() - n).map(|i| toks[i..i + n].join(" ")).collect()
}

fn count(list: &[String], g: &str) -> usize {
    list.iter().filter(|x| *x == g).count()
}

/// (clipped matches, totals) per order 1..=4, candidate length, closest reference length.
fn bleu_counts(cand: &str, refs: &[String]) -> ([usize; 4], [usize; 4], usize, usize) {
    let c = words(cand);
    let mut m = [0; 4];
    let mut t = [0; 4];
    for n in 1..=4 {
        let cg = grams(&c, n);
        let rg: Vec<Vec<String>> = refs.iter().map(|r| grams(&words(r), n)).collect();
        let mut seen: Vec<&String> = vec![];
        for g in &cg {
            if seen.contains(&g) {
                continue;
            }
            seen.push(g);
            let best = rg.iter().map(|r| count(r, g)).max().unwrap();
            m[n - 1] += count(&cg, g).min(best);
        }
        t[n - 1] = cg.len();
    }
    let mut best_len = usize::MAX;
    let mut best_diff = usize::MAX;
    for r in refs {
        let l = words(r).len();
        let d = l.abs_diff(c.len());
        if d < best_diff || (d == best_diff && l < best_len) {
            best_diff = d;
            best_len = l;
        }
    }
    (m, t, c.len(), best_len)
}

fn bp(c: usize, r: usize) -> f64 {
    if c == 0 {
        0.0
    } else if c >= r {
        1.0
    } else {
        (1.0 - r as f64 / c as f64).exp()
    }
}

/// Per-sentence BLEU-1..4: add-one smoothing on orders 2..4, zero when no unigram matches.
pub fn sentence_bleu(cand: &str, refs: &[String]) -> [f64; 4] {
    let (m, t, c, r) = bleu_counts(cand, refs);
    let mut out = [0.0; 4];
    if t[0] == 0 || m[0] == 0 {
        return out;
    }
    for n in 1..=4 {
        let mut logs = 0.0;
        for k in 0..n {
            let p = if k == 0 { m[0] as f64 / t[0] as f64 } else { (m[k] + 1) as f64 / (t[k] + 1) as f64 };
            logs += p.ln();
        }
        out[n - 1] = bp(c, r) * (logs / n as f64).exp();
    }
    out
}

/// Corpus BLEU-1..4 from summed statistics, unsmoothed.
pub fn corpus_bleu(pairs: &[(String, Vec<String>)]) -> [f64; 4] {
    let mut m = [0; 4];
    let mut t = [0; 4];
    let (mut c, mut r) = (0, 0);
    for (cand, refs) in pairs {
        let (pm, pt, pc, pr) = bleu_counts(cand, refs);
        for k in 0..4 {
            m[k] += pm[k];
            t[k] += pt[k];
        }
        c += pc;
        r += pr;
    }
    let mut out = [0.0; 4];
    for n in 1..=4 {
        if (0..n).any(|k| m[k] == 0 || t[k] == 0) {
            continue;
        }
        let logs: f64 = (0..n).map(|k| (m[k] as f64 / t[k] as f64).ln()).sum();
        out[n - 1] = bp(c, r) * (logs / n as f64).exp();
    }
    out
}

fn is_subsequence(sub: &[&str], seq: &[&str]) -> bool {
    let mut it = seq.iter();
    sub.iter().all(|x| it.any(|y| y == x))
}

/// LCS by enumerating every subsequence of the candidate.
pub fn lcs(a: &[&str], b: &[&str]) -> usize {
    let mut best = 0;
    for mask in 0u32..(1 << a.len()) {
        let sub: Vec<&str> = (0..a.len()).filter(|i| mask & (1 << i) != 0).map(|i| a[i]).collect();
        if sub.len() > best && is_subsequence(&sub, b) {
            best = sub.len();
        }
    }
    best
}

pub fn rouge_l(cand: &str, refs: &[String]) -> f64 {
    let c = words(cand);
    let beta2 = 1.2f64 * 1.2;
    refs.iter()
        .map(|r| {
            let r = words(r);
            let l = lcs(&c, &r);
            if l == 0 {
                return 0.0;
            }
            let p = l as f64 / c.len() as f64;
            let rec = l as f64 / r.len() as f64;
            (1.0 + beta2) * p * rec / (rec + beta2 * p)
        })
        .fold(0.0, f64::max)
}

pub fn meteor_lite(cand: &str, refs: &[String]) -> f64 {
    let c = words(cand);
    let mut best = 0.0f64;
    for r in refs {
        let r = words(r);
        let mut taken = vec![false; r.len()];
        let mut pairs = vec![];
        for (i, w) in c.iter().enumerate() {
            for j in 0..r.len() {
                if !taken[j] && r[j] == *w {
                    taken[j] = true;
                    pairs.push((i, j));
                    break;
                }
            }
        }
        let matches = pairs.len();
        if matches == 0 {
            continue;
        }
        let adjacent = pairs.windows(2).filter(|w| w[1].0 == w[0].0 + 1 && w[1].1 == w[0].1 + 1).count();
        let chunks = matches - adjacent;
        let p = matches as f64 / c.len() as f64;
        let rec = matches as f64 / r.len() as f64;
        let f = 10.0 * p * rec / (rec + 9.0 * p);
        let frag = chunks as f64 / matches as f64;
        best = best.max(f * (1.0 - 0.5 * frag.powi(3)));
    }
    best
}

/// Per-image CIDEr over a corpus of `(candidate, references)` pairs.
pub fn cider(pairs: &[(String, Vec<String>)]) -> Vec<f64> {
    let n_images = pairs.len() as f64;
    // every n-gram of each image's references, one list per image and order
    let ref_grams: Vec<Vec<Vec<String>>> = pairs
        .iter()
        .map(|(_, refs)| (1..=4).map(|n| refs.iter().flat_map(|r| grams(&words(r), n)).collect()).collect())
        .collect();
    let df = |g: &str, n: usize| -> f64 {
        let d = ref_grams.iter().filter(|img| img[n - 1].iter().any(|x| x == g)).count();
        d.max(1) as f64
    };
    let vec_of = |s: &str, n: usize| -> HashMap<String, f64> {
        let gs = grams(&words(s), n);
        let mut v = HashMap::new();
        for g in &gs {
            v.insert(g.clone(), count(&gs, g) as f64 * (n_images / df(g, n)).ln());
        }
        v
    };
    pairs
        .iter()
        .map(|(cand, refs)| {
            let mut total = 0.0;
            for n in 1..=4 {
                let c = vec_of(cand, n);
                let mut mean: HashMap<String, f64> = HashMap::new();
                for r in refs {
                    for (g, w) in vec_of(r, n) {
                        *mean.entry(g).or_insert(0.0) += w / refs.len() as f64;
                    }
                }
                let norm = |v: &HashMap<String, f64>| v.values().map(|x| x * x).sum::<f64>().sqrt();
                let (nc, nm) = (norm(&c), norm(&mean));
                if nc > 0.0 && nm > 0.0 {
                    let dot: f64 = c.iter().map(|(g, w)| w * mean.get(g).copied().unwrap_or(0.0)).sum();
                    total += dot / (nc * nm);
                }
            }
            10.0 * total / 4.0
        })
        .collect()
}
