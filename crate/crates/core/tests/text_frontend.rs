use duplex_core::text::{Lexicon, PhonemeVocab, EOS, MASK, PAD, UNK};
use proptest::prelude::*;

const LEXICON_FILE: &str = include_str!("../data/lexicon.tsv");

fn ids(lex: &Lexicon, symbols: &str) -> Vec<usize> {
    let mut v = lex
        .vocab()
        .phonemes_to_ids(&symbols.split_whitespace().collect::<Vec<_>>())
        .unwrap();
    v.push(EOS);
    v
}

#[test]
fn empty_text_is_just_eos() {
    assert_eq!(Lexicon::builtin().text_to_phonemes(""), vec![EOS]);
    assert_eq!(Lexicon::builtin().text_to_phonemes("  ,.!  "), vec![EOS]);
}

#[test]
fn lexicon_words_map_to_their_file_entries() {
    let lex = Lexicon::builtin();
    // Independent read of the shipped file.
    let entries: Vec<(&str, &str)> = LEXICON_FILE
        .lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
        .map(|l| l.split_once('\t').unwrap())
        .collect();
    assert!(entries.len() >= 4000);
    for (word, pron) in entries.iter().step_by(97) {
        assert_eq!(lex.text_to_phonemes(word), ids(&lex, pron), "{word}");
    }
    assert_eq!(lex.text_to_phonemes("Hello, world!"), ids(&lex, "HH AH L OW W ER L D"));
}

#[test]
fn out_of_vocabulary_word_uses_letter_rules() {
    let lex = Lexicon::builtin();
    assert!(lex.lookup("xyzzy").is_none());
    // x → K S, y → Y, z → Z, z → Z, y → Y
    assert_eq!(lex.text_to_phonemes("xyzzy"), ids(&lex, "K S Y Z Z Y"));
    // sh and oo are digraphs
    assert!(lex.lookup("shoob").is_none());
    assert_eq!(lex.text_to_phonemes("shoob"), ids(&lex, "SH UW B"));
}

#[test]
fn letters_without_a_rule_become_unk() {
    let lex = Lexicon::builtin();
    let out = lex.text_to_phonemes("zé");
    assert_eq!(out.first(), Some(&lex.vocab().id("Z").unwrap()));
    assert!(out.contains(&UNK));
}

#[test]
fn vocabulary_layout() {
    let v = PhonemeVocab::arpabet();
    assert_eq!(v.len(), 39 + 4);
    assert_eq!((PAD, EOS, UNK, MASK), (0, 1, 2, 3));
    for (i, s) in v.symbols().iter().enumerate() {
        assert_eq!(v.id(s), Some(i));
    }
    assert!(v.symbol(v.len()).is_err());
    assert_eq!(v.ids_to_phonemes(&[EOS]).unwrap(), vec!["<eos>"]);
    assert_eq!(v.phonemes_to_ids(&["<eos>"]).unwrap(), vec![EOS]);
    assert_eq!(PhonemeVocab::toy(20).num_phonemes(), 20);
}

#[test]
fn lexicon_file_format_is_parsed_with_comments() {
    let lex = Lexicon::parse("# comment\nFOO\tF UW\n\nBAR\tB AA R\n").unwrap();
    assert_eq!(lex.len(), 2);
    assert_eq!(lex.text_to_phonemes("foo bar"), ids(&lex, "F UW B AA R"));
    assert!(Lexicon::parse("FOO\tF QQ\n").is_err());
    assert!(Lexicon::parse("FOO F UW\n").is_err());
}

proptest! {
    #[test]
    fn id_round_trip_is_identity(seq in prop::collection::vec(0usize..43, 0..30)) {
        let v = PhonemeVocab::arpabet();
        let symbols = v.ids_to_phonemes(&seq).unwrap();
        prop_assert_eq!(v.phonemes_to_ids(&symbols).unwrap(), seq);
    }

    #[test]
    fn conversion_is_deterministic_and_closed(text in "[a-zA-Z' ,.]{0,40}") {
        let lex = Lexicon::builtin();
        let a = lex.text_to_phonemes(&text);
        prop_assert_eq!(&a, &lex.text_to_phonemes(&text));
        prop_assert_eq!(a.last(), Some(&EOS));
        prop_assert_eq!(a.iter().filter(|&&i| i == EOS).count(), 1);
        for &i in &a {
            prop_assert!(lex.vocab().symbol(i).is_ok());
            prop_assert!(i != PAD && i != MASK && i != UNK);
        }
    }
}
