use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use super::{GramEntry, NGramModel, WordId, BOS, EOS, UNK};
use crate::error::{Error, Result};

/// ARPA has no infinity; this is the conventional stand-in.
const ARPA_NEG_INF: f64 = -99.0;

fn fmt_log(v: f64) -> String {
    if v == f64::NEG_INFINITY || v <= ARPA_NEG_INF {
        format!("{ARPA_NEG_INF}")
    } else {
        format!("{v}")
    }
}

fn read_log(v: f64) -> f64 {
    if v <= ARPA_NEG_INF {
        f64::NEG_INFINITY
    } else {
        v
    }
}

pub fn export_arpa(model: &NGramModel) -> String {
    let mut out = String::from("\\data\\\n");
    for k in 1..=model.order() {
        let _ = writeln!(out, "ngram {k}={}", model.grams(k).len());
    }
    for k in 1..=model.order() {
        let _ = write!(out, "\n\\{k}-grams:\n");
        let mut rows: Vec<(Vec<&str>, &GramEntry)> = model
            .grams(k)
            .iter()
            .map(|(g, e)| (g.iter().map(|&w| model.word(w)).collect(), e))
            .collect();
        rows.sort_by(|a, b| a.0.cmp(&b.0));
        for (words, e) in rows {
            let _ = write!(out, "{}\t{}", fmt_log(e.log10_prob), words.join(" "));
            if let Some(b) = e.log10_backoff {
                let _ = write!(out, "\t{}", fmt_log(b));
            }
            out.push('\n');
        }
    }
    out.push_str("\n\\end\\\n");
    out
}

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        what: "arpa",
        line,
        msg: msg.into(),
    }
}

pub fn import_arpa(text: &str) -> Result<NGramModel> {
    #[derive(PartialEq)]
    enum State {
        Start,
        Header,
        Grams(usize),
        End,
    }
    let mut state = State::Start;
    let mut declared: Vec<(usize, usize)> = Vec::new();
    let mut rows: Vec<Vec<(Vec<String>, GramEntry)>> = Vec::new();

    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if state == State::End {
            return Err(parse_err(lineno, "content after \\end\\"));
        }
        if line == "\\data\\" {
            if state != State::Start {
                return Err(parse_err(lineno, "repeated \\data\\ section"));
            }
            state = State::Header;
            continue;
        }
        if line == "\\end\\" {
            if state == State::Start {
                return Err(parse_err(lineno, "\\end\\ before \\data\\"));
            }
            state = State::End;
            continue;
        }
        if let Some(k) = line
            .strip_prefix('\\')
            .and_then(|l| l.strip_suffix("-grams:"))
        {
            let k: usize = k
                .parse()
                .map_err(|_| parse_err(lineno, format!("bad section header {line:?}")))?;
            let expected = rows.len() + 1;
            if state == State::Start || k != expected {
                return Err(parse_err(
                    lineno,
                    format!("expected \\{expected}-grams: section, found {line:?}"),
                ));
            }
            rows.push(Vec::new());
            state = State::Grams(k);
            continue;
        }
        match state {
            State::Start => {
                return Err(parse_err(lineno, "expected \\data\\ header"));
            }
            State::Header => {
                let spec = line
                    .strip_prefix("ngram ")
                    .ok_or_else(|| parse_err(lineno, format!("expected 'ngram k=n', found {line:?}")))?;
                let (k, n) = spec
                    .split_once('=')
                    .ok_or_else(|| parse_err(lineno, "expected 'ngram k=n'"))?;
                let k: usize = k.trim().parse().map_err(|_| parse_err(lineno, "bad n-gram order"))?;
                let n: usize = n.trim().parse().map_err(|_| parse_err(lineno, "bad n-gram count"))?;
                if k != declared.len() + 1 {
                    return Err(parse_err(lineno, format!("n-gram order {k} out of sequence")));
                }
                declared.push((k, n));
            }
            State::Grams(k) => {
                let fields: Vec<&str> = line.split_whitespace().collect();
                if fields.len() != k + 1 && fields.len() != k + 2 {
                    return Err(parse_err(
                        lineno,
                        format!("a {k}-gram line needs {} or {} fields, found {}", k + 1, k + 2, fields.len()),
                    ));
                }
                let num = |s: &str| -> Result<f64> {
                    let v: f64 = s
                        .parse()
                        .map_err(|_| parse_err(lineno, format!("bad number {s:?}")))?;
                    if v.is_nan() || v > 0.0 {
                        return Err(parse_err(lineno, format!("log probability {s} is not <= 0")));
                    }
                    Ok(read_log(v))
                };
                let log10_prob = num(fields[0])?;
                let log10_backoff = match fields.get(k + 1) {
                    Some(b) => Some(
                        b.parse::<f64>()
                            .map(read_log)
                            .map_err(|_| parse_err(lineno, format!("bad backoff {b:?}")))?,
                    ),
                    None => None,
                };
                let words = fields[1..=k].iter().map(|w| w.to_string()).collect();
                rows[k - 1].push((
                    words,
                    GramEntry {
                        log10_prob,
                        log10_backoff,
                    },
                ));
            }
            State::End => unreachable!(),
        }
    }

    let last = text.lines().count();
    if state != State::End {
        return Err(parse_err(last, "missing \\end\\ marker"));
    }
    if declared.is_empty() {
        return Err(parse_err(last, "no 'ngram k=n' counts in \\data\\ header"));
    }
    if rows.len() != declared.len() {
        return Err(parse_err(
            last,
            format!("header declares {} orders but {} sections found", declared.len(), rows.len()),
        ));
    }
    for ((k, n), r) in declared.iter().zip(&rows) {
        if r.len() != *n {
            return Err(parse_err(
                last,
                format!("header declares {n} {k}-grams but {} are listed", r.len()),
            ));
        }
    }

    let mut vocab: Vec<String> = Vec::new();
    let mut index: HashMap<String, WordId> = HashMap::new();
    for (words, _) in &rows[0] {
        if index.contains_key(&words[0]) {
            return Err(parse_err(last, format!("unigram {:?} listed twice", words[0])));
        }
        index.insert(words[0].clone(), vocab.len() as WordId);
        vocab.push(words[0].clone());
    }
    let order = rows.len();
    let mut grams: Vec<HashMap<Vec<WordId>, GramEntry>> = vec![HashMap::new(); order];
    for (k, r) in rows.into_iter().enumerate() {
        for (words, entry) in r {
            let ids = words
                .iter()
                .map(|w| {
                    index
                        .get(w)
                        .copied()
                        .ok_or_else(|| parse_err(last, format!("word {w:?} has no unigram entry")))
                })
                .collect::<Result<Vec<_>>>()?;
            if grams[k].insert(ids, entry).is_some() {
                return Err(parse_err(last, format!("{:?} listed twice", words.join(" "))));
            }
        }
    }
    // models from other toolkits may omit the special tokens
    for tok in [BOS, EOS, UNK] {
        if !index.contains_key(tok) {
            let id = vocab.len() as WordId;
            index.insert(tok.to_string(), id);
            vocab.push(tok.to_string());
            grams[0].insert(
                vec![id],
                GramEntry {
                    log10_prob: f64::NEG_INFINITY,
                    log10_backoff: None,
                },
            );
        }
    }
    NGramModel::from_parts(order, vocab, grams)
}

pub fn save_arpa(model: &NGramModel, path: &Path) -> Result<()> {
    std::fs::write(path, export_arpa(model)).map_err(|e| Error::file(path, e))
}

pub fn load_arpa(path: &Path) -> Result<NGramModel> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    import_arpa(&text).map_err(|e| match e {
        Error::Parse { line, msg, .. } => Error::file(path, format!("line {line}: {msg}")),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::{train_ngram, Smoothing};

    const HAND: &str = "\\data\\
ngram 1=4
ngram 2=2

\\1-grams:
-0.30103\t<s>\t-0.30103
-0.30103\ta\t-0.1
-0.60206\tb
-0.60206\t</s>

\\2-grams:
0\t<s> a
-0.1\ta b

\\end\\
";

    #[test]
    fn hand_written_model_loads_and_scores() {
        let m = import_arpa(HAND).unwrap();
        assert_eq!(m.order(), 2);
        assert!((m.score_log10("a", &["<s>"]) - 0.0).abs() < 1e-12);
        assert!((m.score_log10("b", &["a"]) + 0.1).abs() < 1e-12);
        // backed off: bow(a) + P(</s>)
        assert!((m.score_log10("</s>", &["a"]) - (-0.1 - 0.60206)).abs() < 1e-12);
        // <unk> was absent and is added with zero probability
        assert_eq!(m.score_log10("zzz", &[]), f64::NEG_INFINITY);
    }

    #[test]
    fn round_trip_is_exact() {
        let m = train_ngram(&["a b c", "a c b", "b b a c"], 3, Smoothing::WittenBell).unwrap();
        let text = export_arpa(&m);
        let back = import_arpa(&text).unwrap();
        assert_eq!(export_arpa(&back), text);
        for ctx in [vec![], vec!["a"], vec!["a", "b"], vec!["<s>", "c"]] {
            for w in ["a", "b", "c", "</s>", "<unk>"] {
                assert_eq!(m.score_log10(w, &ctx), back.score_log10(w, &ctx));
            }
        }
    }

    #[test]
    fn missing_end_marker_is_named() {
        let text = HAND.replace("\\end\\\n", "");
        let err = import_arpa(&text).unwrap_err().to_string();
        assert!(err.contains("\\end\\"), "{err}");
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = HAND.replace("-0.60206\tb", "oops\tb");
        match import_arpa(&text).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 8),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn count_mismatch_is_rejected() {
        let text = HAND.replace("ngram 2=2", "ngram 2=3");
        assert!(import_arpa(&text).is_err());
    }
}
