use crate::error::{Error, Result};

/// Ordered output symbols; the blank is the extra index `len()`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Alphabet {
    symbols: Vec<char>,
}

impl Alphabet {
    pub fn new(symbols: impl IntoIterator<Item = char>) -> Result<Self> {
        let symbols: Vec<char> = symbols.into_iter().collect();
        if symbols.is_empty() {
            return Err(Error::invalid("alphabet is empty"));
        }
        for (i, c) in symbols.iter().enumerate() {
            if symbols[..i].contains(c) {
                return Err(Error::invalid(format!("alphabet repeats symbol {c:?}")));
            }
        }
        Ok(Alphabet { symbols })
    }

    pub fn symbols(&self) -> &[char] {
        &self.symbols
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn blank_index(&self) -> usize {
        self.symbols.len()
    }

    /// Symbols plus blank.
    pub fn n_labels(&self) -> usize {
        self.symbols.len() + 1
    }

    pub fn index_of(&self, c: char) -> Option<usize> {
        self.symbols.iter().position(|&s| s == c)
    }

    pub fn symbol(&self, id: usize) -> Option<char> {
        self.symbols.get(id).copied()
    }

    /// Space-delimited word from the alphabet, if it has a space symbol.
    pub fn space_index(&self) -> Option<usize> {
        self.index_of(' ')
    }

    /// Maps every character of `text` to its symbol index.
    pub fn encode(&self, text: &str) -> Result<LabelSequence> {
        text.chars()
            .map(|c| {
                self.index_of(c)
                    .ok_or_else(|| Error::invalid(format!("{c:?} is not in the alphabet")))
            })
            .collect::<Result<Vec<_>>>()
            .map(LabelSequence::from_ids)
    }

    pub fn decode(&self, labels: &LabelSequence) -> String {
        labels.ids().iter().filter_map(|&i| self.symbol(i)).collect()
    }
}

/// Target symbol indices; never contains the blank.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LabelSequence(Vec<usize>);

impl LabelSequence {
    pub fn new(ids: Vec<usize>, alphabet: &Alphabet) -> Result<Self> {
        if let Some(&bad) = ids.iter().find(|&&i| i >= alphabet.len()) {
            return Err(Error::invalid(format!(
                "label {bad} is outside an alphabet of {} symbols",
                alphabet.len()
            )));
        }
        Ok(LabelSequence(ids))
    }

    pub(crate) fn from_ids(ids: Vec<usize>) -> Self {
        LabelSequence(ids)
    }

    pub fn ids(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}
