use std::collections::BTreeMap;
use std::path::Path;

use super::metrics::{edit_distance, EditDistanceResult};
use crate::error::{Error, Result};

const TIMIT_FOLDING: &str = include_str!("../../data/timit_61_to_39.txt");

/// Many-to-one phone map applied before scoring; a phone mapped to
/// nothing is dropped.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PhoneFolding {
    map: BTreeMap<String, Option<String>>,
}

impl PhoneFolding {
    /// The conventional 61 to 39 TIMIT folding.
    pub fn timit() -> Self {
        Self::parse(TIMIT_FOLDING).expect("bundled folding table is well formed")
    }

    /// Lines of `source target`, `#` comments, `-` as target to drop.
    pub fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let [src, dst] = fields[..] else {
                return Err(Error::Parse {
                    what: "phone folding",
                    line: n + 1,
                    msg: format!("expected `source target`, got {line:?}"),
                });
            };
            let dst = (dst != "-").then(|| dst.to_string());
            if map.insert(src.to_string(), dst).is_some() {
                return Err(Error::Parse {
                    what: "phone folding",
                    line: n + 1,
                    msg: format!("phone {src:?} mapped twice"),
                });
            }
        }
        Ok(PhoneFolding { map })
    }

    pub fn source_phones(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(String::as_str)
    }

    pub fn fold<T: AsRef<str>>(&self, phones: &[T]) -> Result<Vec<String>> {
        let mut out = Vec::with_capacity(phones.len());
        for p in phones {
            let p = p.as_ref();
            match self.map.get(p) {
                Some(Some(dst)) => out.push(dst.clone()),
                Some(None) => {}
                None => return Err(Error::invalid(format!("unknown phone symbol {p:?}"))),
            }
        }
        Ok(out)
    }
}

/// Phone error rate, folding both sides first when a map is given.
pub fn phone_error_rate<T: AsRef<str>>(
    reference: &[T],
    hypothesis: &[T],
    folding: Option<&PhoneFolding>,
) -> Result<EditDistanceResult> {
    let (r, h): (Vec<String>, Vec<String>) = match folding {
        Some(f) => (f.fold(reference)?, f.fold(hypothesis)?),
        None => (
            reference.iter().map(|p| p.as_ref().to_string()).collect(),
            hypothesis.iter().map(|p| p.as_ref().to_string()).collect(),
        ),
    };
    if r.is_empty() {
        return Err(Error::invalid("reference phone sequence is empty"));
    }
    Ok(edit_distance(&r, &h))
}

/// Parses `.PHN`-style `begin end phone` lines into the phone sequence.
pub fn parse_timit_phones(text: &str) -> Result<Vec<String>> {
    let mut phones = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let bad = |msg: String| Error::Parse {
            what: "phone transcript",
            line: n + 1,
            msg,
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [begin, end, phone] = fields[..] else {
            return Err(bad(format!("expected `begin end phone`, got {line:?}")));
        };
        let begin: u64 = begin.parse().map_err(|_| bad(format!("bad begin sample {begin:?}")))?;
        let end: u64 = end.parse().map_err(|_| bad(format!("bad end sample {end:?}")))?;
        if end < begin {
            return Err(bad(format!("segment ends ({end}) before it begins ({begin})")));
        }
        phones.push(phone.to_string());
    }
    Ok(phones)
}

pub fn load_timit_phone_transcript(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    parse_timit_phones(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phn_fixture() {
        assert_eq!(parse_timit_phones("0 1000 h#\n1000 2000 ay").unwrap(), ["h#", "ay"]);
    }

    #[test]
    fn malformed_phn_reports_line() {
        let err = parse_timit_phones("0 10 h#\n10 x ay\n").unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
    }

    #[test]
    fn timit_table_has_61_sources_and_39_targets() {
        let f = PhoneFolding::timit();
        assert_eq!(f.source_phones().count(), 61);
        let targets: std::collections::BTreeSet<_> = f.map.values().flatten().collect();
        assert_eq!(targets.len(), 39);
    }

    #[test]
    fn folding_merges_and_drops() {
        let f = PhoneFolding::timit();
        assert_eq!(f.fold(&["ao", "q", "pcl", "zh"]).unwrap(), ["aa", "sil", "sh"]);
        let err = f.fold(&["xx"]).unwrap_err().to_string();
        assert!(err.contains("\"xx\""));
    }

    #[test]
    fn per_examples() {
        let f = PhoneFolding::timit();
        let r = phone_error_rate(&["h#", "ay", "k"], &["h#", "ay", "k"], Some(&f)).unwrap();
        assert_eq!(r.rate, 0.0);
        let r = phone_error_rate(&["b", "ae", "t"], &["b", "ae"], None).unwrap();
        assert_eq!(r.deletions, 1);
        // ix folds to ih, so this is a match
        let r = phone_error_rate(&["ih", "s", "aa", "d"], &["ix", "z", "ao"], Some(&f)).unwrap();
        assert_eq!((r.substitutions, r.deletions, r.insertions), (1, 1, 0));
        assert_eq!(r.rate, 0.5);
    }
}
