//! Phoneme inventory, lexicon lookup and letter fallback.

use std::collections::HashMap;
use std::path::Path;

use crate::{CoreError, Result};

pub const PAD: usize = 0;
pub const EOS: usize = 1;
pub const UNK: usize = 2;
/// Corruption placeholder used by the text denoising task.
pub const MASK: usize = 3;
const SPECIALS: [&str; 4] = ["<pad>", "<eos>", "<unk>", "<mask>"];

pub const ARPABET: [&str; 39] = [
    "AA", "AE", "AH", "AO", "AW", "AY", "B", "CH", "D", "DH", "EH", "ER", "EY", "F", "G", "HH", "IH", "IY", "JH", "K",
    "L", "M", "N", "NG", "OW", "OY", "P", "R", "S", "SH", "T", "TH", "UH", "UW", "V", "W", "Y", "Z", "ZH",
];

/// Specials first (ids 0..4), then phoneme symbols in order.
#[derive(Clone, Debug, PartialEq)]
pub struct PhonemeVocab {
    symbols: Vec<String>,
    index: HashMap<String, usize>,
}

impl PhonemeVocab {
    pub fn new<S: AsRef<str>>(phonemes: &[S]) -> Result<Self> {
        let symbols: Vec<String> = SPECIALS
            .iter()
            .map(|s| s.to_string())
            .chain(phonemes.iter().map(|s| s.as_ref().to_string()))
            .collect();
        let mut index = HashMap::with_capacity(symbols.len());
        for (i, s) in symbols.iter().enumerate() {
            if s.is_empty() || s.contains(char::is_whitespace) {
                return Err(CoreError::Data(format!("bad phoneme symbol {s:?}")));
            }
            if index.insert(s.clone(), i).is_some() {
                return Err(CoreError::Data(format!("duplicate phoneme symbol {s}")));
            }
        }
        Ok(Self { symbols, index })
    }

    pub fn arpabet() -> Self {
        Self::new(&ARPABET).expect("builtin inventory is valid")
    }

    /// Synthetic inventory `p0 … p{n-1}`.
    pub fn toy(n: usize) -> Self {
        let names: Vec<String> = (0..n).map(|i| format!("p{i}")).collect();
        Self::new(&names).expect("toy inventory is valid")
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    /// Number of non-special symbols.
    pub fn num_phonemes(&self) -> usize {
        self.symbols.len() - SPECIALS.len()
    }

    /// Id of the `i`-th phoneme symbol.
    pub fn phoneme_id(&self, i: usize) -> usize {
        SPECIALS.len() + i
    }

    pub fn is_special(id: usize) -> bool {
        id < SPECIALS.len()
    }

    pub fn id(&self, symbol: &str) -> Option<usize> {
        self.index.get(symbol).copied()
    }

    pub fn symbol(&self, id: usize) -> Result<&str> {
        self.symbols
            .get(id)
            .map(String::as_str)
            .ok_or_else(|| CoreError::Data(format!("phoneme id {id} outside vocabulary of {}", self.len())))
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn ids_to_phonemes(&self, ids: &[usize]) -> Result<Vec<String>> {
        ids.iter().map(|&i| self.symbol(i).map(str::to_string)).collect()
    }

    pub fn phonemes_to_ids<S: AsRef<str>>(&self, symbols: &[S]) -> Result<Vec<usize>> {
        symbols
            .iter()
            .map(|s| {
                self.id(s.as_ref())
                    .ok_or_else(|| CoreError::Data(format!("unknown phoneme {}", s.as_ref())))
            })
            .collect()
    }

    /// Space-separated symbols, e.g. `"HH AH L OW <eos>"`.
    pub fn render(&self, ids: &[usize]) -> Result<String> {
        Ok(self.ids_to_phonemes(ids)?.join(" "))
    }

    /// Parses whitespace-separated symbols. EOS is appended unless already last.
    pub fn parse(&self, text: &str) -> Result<Vec<usize>> {
        let mut ids = self.phonemes_to_ids(&text.split_whitespace().collect::<Vec<_>>())?;
        if ids.last() != Some(&EOS) {
            ids.push(EOS);
        }
        Ok(ids)
    }
}

const DIGRAPHS: [(&str, &[&str]); 10] = [
    ("ch", &["CH"]),
    ("ck", &["K"]),
    ("ee", &["IY"]),
    ("ng", &["NG"]),
    ("oo", &["UW"]),
    ("ph", &["F"]),
    ("qu", &["K", "W"]),
    ("sh", &["SH"]),
    ("th", &["TH"]),
    ("wh", &["W"]),
];

fn letter_rule(c: char) -> Option<&'static [&'static str]> {
    Some(match c {
        'a' => &["AE"],
        'b' => &["B"],
        'c' => &["K"],
        'd' => &["D"],
        'e' => &["EH"],
        'f' => &["F"],
        'g' => &["G"],
        'h' => &["HH"],
        'i' => &["IH"],
        'j' => &["JH"],
        'k' => &["K"],
        'l' => &["L"],
        'm' => &["M"],
        'n' => &["N"],
        'o' => &["AA"],
        'p' => &["P"],
        'q' => &["K"],
        'r' => &["R"],
        's' => &["S"],
        't' => &["T"],
        'u' => &["AH"],
        'v' => &["V"],
        'w' => &["W"],
        'x' => &["K", "S"],
        'y' => &["Y"],
        'z' => &["Z"],
        _ => return None,
    })
}

/// Word to phoneme map plus a letter-level fallback for unknown words.
#[derive(Clone, Debug)]
pub struct Lexicon {
    vocab: PhonemeVocab,
    entries: HashMap<String, Vec<usize>>,
}

impl Lexicon {
    /// The bundled 5000-word ARPAbet lexicon.
    pub fn builtin() -> Self {
        Self::parse(include_str!("../data/lexicon.tsv")).expect("bundled lexicon parses")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text =
            std::fs::read_to_string(path).map_err(|e| CoreError::io(format!("reading {}", path.display()), e))?;
        Self::parse(&text)
    }

    /// `WORD<TAB>PH1 PH2 …` lines over the ARPAbet inventory; `#` starts a comment line.
    pub fn parse(text: &str) -> Result<Self> {
        let vocab = PhonemeVocab::arpabet();
        let mut entries = HashMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim_end();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (word, prons) = line
                .split_once('\t')
                .ok_or_else(|| CoreError::Data(format!("lexicon line {}: missing tab", n + 1)))?;
            let ids = vocab
                .phonemes_to_ids(&prons.split_whitespace().collect::<Vec<_>>())
                .map_err(|e| CoreError::Data(format!("lexicon line {}: {e}", n + 1)))?;
            if ids.is_empty() {
                return Err(CoreError::Data(format!("lexicon line {}: empty pronunciation", n + 1)));
            }
            entries.insert(word.to_lowercase(), ids);
        }
        Ok(Self { vocab, entries })
    }

    pub fn vocab(&self) -> &PhonemeVocab {
        &self.vocab
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn lookup(&self, word: &str) -> Option<&[usize]> {
        self.entries.get(&word.to_lowercase()).map(Vec::as_slice)
    }

    /// Letter-to-sound expansion: digraphs first, then single letters.
    /// Apostrophes are silent; characters without a rule become UNK.
    pub fn fallback(&self, word: &str) -> Vec<usize> {
        let chars: Vec<char> = word.to_lowercase().chars().collect();
        let mut out = Vec::new();
        let mut i = 0;
        while i < chars.len() {
            if i + 1 < chars.len() {
                let pair: String = chars[i..i + 2].iter().collect();
                if let Some((_, ph)) = DIGRAPHS.iter().find(|(d, _)| *d == pair) {
                    out.extend(ph.iter().map(|p| self.vocab.id(p).expect("rule symbol in inventory")));
                    i += 2;
                    continue;
                }
            }
            match (chars[i], letter_rule(chars[i])) {
                ('\'', _) => {}
                (_, Some(ph)) => out.extend(ph.iter().map(|p| self.vocab.id(p).expect("rule symbol in inventory"))),
                (_, None) => out.push(UNK),
            }
            i += 1;
        }
        out
    }

    /// Lowercases, strips punctuation, maps each word through the lexicon or the
    /// fallback, and appends EOS.
    pub fn text_to_phonemes(&self, text: &str) -> Vec<usize> {
        let mut out = Vec::new();
        for token in text.split_whitespace() {
            let word: String = token
                .to_lowercase()
                .chars()
                .filter(|c| c.is_alphanumeric() || *c == '\'')
                .collect();
            let word = word.trim_matches('\'');
            if word.is_empty() {
                continue;
            }
            match self.entries.get(word) {
                Some(ids) => out.extend_from_slice(ids),
                None => out.extend(self.fallback(word)),
            }
        }
        out.push(EOS);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn specials_have_fixed_ids() {
        let v = PhonemeVocab::arpabet();
        assert_eq!(v.len(), 43);
        assert_eq!(v.id("<pad>"), Some(PAD));
        assert_eq!(v.id("<eos>"), Some(EOS));
        assert_eq!(v.id("<unk>"), Some(UNK));
        assert_eq!(v.id("<mask>"), Some(MASK));
        assert_eq!(v.num_phonemes(), 39);
    }

    #[test]
    fn toy_vocab_has_twenty_phonemes() {
        let v = PhonemeVocab::toy(20);
        assert_eq!(v.num_phonemes(), 20);
        assert_eq!(v.symbol(v.phoneme_id(0)).unwrap(), "p0");
    }

    #[test]
    fn duplicates_rejected() {
        assert!(PhonemeVocab::new(&["A", "A"]).is_err());
        assert!(PhonemeVocab::new(&["<eos>"]).is_err());
    }

    #[test]
    fn apostrophes_are_silent_in_fallback() {
        let lex = Lexicon::builtin();
        assert_eq!(lex.fallback("'zz'"), lex.fallback("zz"));
    }
}
