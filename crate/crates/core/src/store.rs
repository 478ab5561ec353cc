//! On-disk corpus layout: manifest, mel feature files, phoneme transcripts,
//! vocabulary.
//!
//! ```text
//! <dir>/manifest.tsv        id \t wav_path \t transcript
//! <dir>/phonemes.tsv        id \t space-separated phoneme symbols
//! <dir>/vocab.txt           one phoneme symbol per line, specials excluded
//! <dir>/features/<id>.melf  MELF feature file
//! ```

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use duplex_tensor::Tensor;

use crate::corpus::Utterance;
use crate::experiment::phonemes_only;
use crate::text::{PhonemeVocab, EOS};
use crate::{CoreError, Result};

const MELF_MAGIC: &[u8; 4] = b"MELF";
const MELF_VERSION: u32 = 1;

pub const MANIFEST_FILE: &str = "manifest.tsv";
pub const PHONEMES_FILE: &str = "phonemes.tsv";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const FEATURES_DIR: &str = "features";

/// Writes `[frames, n_mels]` as 32-bit little-endian floats.
pub fn write_features(path: &Path, mel: &Tensor) -> Result<()> {
    if mel.shape().len() != 2 {
        return Err(CoreError::Data(format!("feature tensor must be 2-D, got {:?}", mel.shape())));
    }
    let mut buf = Vec::with_capacity(16 + 4 * mel.len());
    buf.extend_from_slice(MELF_MAGIC);
    buf.extend_from_slice(&MELF_VERSION.to_le_bytes());
    buf.extend_from_slice(&(mel.rows() as u32).to_le_bytes());
    buf.extend_from_slice(&(mel.cols() as u32).to_le_bytes());
    for &v in mel.data() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| CoreError::io(format!("writing {}", path.display()), e))
}

pub fn read_features(path: &Path) -> Result<Tensor> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| CoreError::io(format!("reading {}", path.display()), e))?;
    let bad = |what: &str| CoreError::Data(format!("{}: {what}", path.display()));
    if bytes.len() < 16 || &bytes[..4] != MELF_MAGIC {
        return Err(bad("not a MELF file"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    if word(4) != MELF_VERSION {
        return Err(bad(&format!("unsupported MELF version {}", word(4))));
    }
    let (frames, mels) = (word(8) as usize, word(12) as usize);
    if frames == 0 || mels == 0 {
        return Err(bad("empty feature matrix"));
    }
    if bytes.len() != 16 + 4 * frames * mels {
        return Err(bad("length does not match header"));
    }
    let data = bytes[16..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Ok(Tensor::matrix(frames, mels, data)?)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: String,
    pub wav: String,
    pub transcript: String,
}

pub fn parse_manifest(text: &str) -> Result<Vec<ManifestEntry>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.splitn(3, '\t');
        let (Some(id), Some(wav), Some(transcript)) = (parts.next(), parts.next(), parts.next()) else {
            return Err(CoreError::Data(format!("manifest line {}: expected 3 tab-separated fields", n + 1)));
        };
        if id.is_empty() {
            return Err(CoreError::Data(format!("manifest line {}: empty id", n + 1)));
        }
        out.push(ManifestEntry {
            id: id.to_string(),
            wav: wav.to_string(),
            transcript: transcript.to_string(),
        });
    }
    Ok(out)
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = fs::read_to_string(path).map_err(|e| CoreError::io(format!("reading {}", path.display()), e))?;
    parse_manifest(&text)
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CoreError::io(format!("creating {}", path.display()), e))
}

fn write_err(path: &Path) -> impl Fn(std::io::Error) -> CoreError + '_ {
    move |e| CoreError::io(format!("writing {}", path.display()), e)
}

pub fn feature_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(FEATURES_DIR).join(format!("{id}.melf"))
}

/// A corpus loaded from a data directory, in manifest order.
#[derive(Clone, Debug)]
pub struct StoredCorpus {
    pub vocab: PhonemeVocab,
    pub manifest: Vec<ManifestEntry>,
    pub utterances: Vec<Utterance>,
}

impl StoredCorpus {
    pub fn n_mels(&self) -> Option<usize> {
        self.utterances.iter().find_map(|u| u.speech.as_ref().map(|s| s.cols()))
    }
}

/// Writes manifest, transcripts, vocabulary and features. Every utterance
/// must be paired; `manifest` supplies the wav path and transcript columns.
pub fn write_corpus(dir: &Path, vocab: &PhonemeVocab, manifest: &[ManifestEntry], utterances: &[Utterance]) -> Result<()> {
    if manifest.len() != utterances.len() {
        return Err(CoreError::Data("manifest and utterance counts differ".into()));
    }
    fs::create_dir_all(dir.join(FEATURES_DIR))
        .map_err(|e| CoreError::io(format!("creating {}", dir.display()), e))?;

    let vocab_path = dir.join(VOCAB_FILE);
    let mut w = create(&vocab_path)?;
    for i in 0..vocab.num_phonemes() {
        writeln!(w, "{}", vocab.symbol(vocab.phoneme_id(i))?).map_err(write_err(&vocab_path))?;
    }
    w.flush().map_err(write_err(&vocab_path))?;

    let manifest_path = dir.join(MANIFEST_FILE);
    let phonemes_path = dir.join(PHONEMES_FILE);
    let mut wm = create(&manifest_path)?;
    let mut wp = create(&phonemes_path)?;
    for (entry, u) in manifest.iter().zip(utterances) {
        let (Some(speech), Some(text)) = (&u.speech, &u.text) else {
            return Err(CoreError::Data(format!("utterance {} is not paired", u.id)));
        };
        if entry.id != u.id {
            return Err(CoreError::Data(format!("manifest id {} does not match utterance {}", entry.id, u.id)));
        }
        writeln!(wm, "{}\t{}\t{}", entry.id, entry.wav, entry.transcript).map_err(write_err(&manifest_path))?;
        let symbols = vocab.ids_to_phonemes(phonemes_only(text))?;
        writeln!(wp, "{}\t{}", u.id, symbols.join(" ")).map_err(write_err(&phonemes_path))?;
        write_features(&feature_path(dir, &u.id), speech)?;
    }
    wm.flush().map_err(write_err(&manifest_path))?;
    wp.flush().map_err(write_err(&phonemes_path))?;
    Ok(())
}

pub fn read_vocab(dir: &Path) -> Result<PhonemeVocab> {
    read_vocab_file(&dir.join(VOCAB_FILE))
}

pub fn read_vocab_file(path: &Path) -> Result<PhonemeVocab> {
    let text = fs::read_to_string(path).map_err(|e| CoreError::io(format!("reading {}", path.display()), e))?;
    let symbols: Vec<&str> = text.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
    PhonemeVocab::new(&symbols)
}

/// Loads a directory written by [`write_corpus`]. Transcripts get EOS appended.
pub fn load_corpus(dir: &Path) -> Result<StoredCorpus> {
    let vocab = read_vocab(dir)?;
    let manifest = read_manifest(&dir.join(MANIFEST_FILE))?;
    let phonemes_path = dir.join(PHONEMES_FILE);
    let text = fs::read_to_string(&phonemes_path)
        .map_err(|e| CoreError::io(format!("reading {}", phonemes_path.display()), e))?;
    let mut transcripts = std::collections::HashMap::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let Some((id, symbols)) = line.split_once('\t') else {
            return Err(CoreError::Data(format!("{} line {}: missing tab", PHONEMES_FILE, n + 1)));
        };
        let symbols: Vec<&str> = symbols.split_whitespace().collect();
        let mut ids = vocab.phonemes_to_ids(&symbols)?;
        ids.push(EOS);
        transcripts.insert(id.to_string(), ids);
    }
    let mut utterances = Vec::with_capacity(manifest.len());
    for entry in &manifest {
        let text = transcripts
            .remove(&entry.id)
            .ok_or_else(|| CoreError::Data(format!("no phonemes for {}", entry.id)))?;
        let speech = read_features(&feature_path(dir, &entry.id))?;
        utterances.push(Utterance::paired(entry.id.clone(), speech, text));
    }
    if let Some(n) = utterances.iter().find_map(|u| u.speech.as_ref()).map(|s| s.cols()) {
        if let Some(u) = utterances.iter().find(|u| u.speech.as_ref().is_some_and(|s| s.cols() != n)) {
            return Err(CoreError::Data(format!("{} has a different mel count", u.id)));
        }
    }
    Ok(StoredCorpus {
        vocab,
        manifest,
        utterances,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn features_round_trip_at_f32_precision() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.melf");
        let mel = Tensor::matrix(3, 2, vec![0.5, -1.25, 3.0, 1e-3, -11.5, 7.0]).unwrap();
        write_features(&path, &mel).unwrap();
        let back = read_features(&path).unwrap();
        assert_eq!(back.shape(), &[3, 2]);
        for (a, b) in back.data().iter().zip(mel.data()) {
            assert_eq!(*a, *b as f32 as f64);
        }
        let bytes = fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], b"MELF");
        assert_eq!(bytes.len(), 16 + 6 * 4);
    }

    #[test]
    fn bad_feature_files_are_data_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.melf");
        fs::write(&path, b"MELX\x01\0\0\0\x01\0\0\0\x01\0\0\0\0\0\0\0").unwrap();
        assert!(matches!(read_features(&path), Err(CoreError::Data(_))));
        fs::write(&path, b"MELF\x02\0\0\0\x01\0\0\0\x01\0\0\0\0\0\0\0").unwrap();
        assert!(matches!(read_features(&path), Err(CoreError::Data(_))));
        fs::write(&path, b"MELF\x01\0\0\0\x02\0\0\0\x01\0\0\0\0\0\0\0").unwrap();
        assert!(matches!(read_features(&path), Err(CoreError::Data(_))));
    }

    #[test]
    fn manifest_keeps_tabs_out_of_transcripts() {
        let m = parse_manifest("a\twav/a.wav\tHello world\n\nb\t-\tx\n").unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m[0].transcript, "Hello world");
        assert!(parse_manifest("a\tb\n").is_err());
    }
}
