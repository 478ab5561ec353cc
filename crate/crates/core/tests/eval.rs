#[path = "support/edit_oracle.rs"]
mod edit_oracle;

use duplex_core::eval::{
    align, edit_distance, per, render_spectrogram_image, right_half_per, spectrogram_pgm, split_per, EditOp,
    MelDistortion,
};
use duplex_tensor::Tensor;
use edit_oracle::{all_sequences, recursive_distance};
use proptest::prelude::*;

#[test]
fn dynamic_program_matches_recursion_exhaustively() {
    let seqs = all_sequences(3, 7);
    assert_eq!(seqs.len(), 3280);
    for a in &seqs {
        for b in &seqs {
            let expected = recursive_distance(a, b);
            assert_eq!(edit_distance(a, b), expected, "{a:?} {b:?}");
            if !a.is_empty() {
                assert_eq!(per(a, b).unwrap().errors(), expected, "{a:?} {b:?}");
            }
        }
    }
}

#[test]
fn hand_examples() {
    let r = per(&["a", "b", "c"], &["a", "c"]).unwrap();
    assert_eq!((r.substitutions, r.deletions, r.insertions), (0, 1, 0));
    assert!((r.per() - 1.0 / 3.0).abs() < 1e-15);
    assert_eq!(per(&[1, 2, 3], &[1, 2, 3]).unwrap().per(), 0.0);
    let empty: [u8; 0] = [];
    let r = per(&[1u8, 2, 3, 4], &empty).unwrap();
    assert_eq!((r.deletions, r.per()), (4, 1.0));
    assert!(per(&empty, &[1u8]).is_err());
    assert!(right_half_per::<u8, Vec<u8>>(&[vec![1]], &[]).is_err());
}

#[test]
fn errors_in_the_last_symbol_land_in_the_right_half() {
    let (left, right) = split_per(&[1, 2, 3, 4, 5], &[1, 2, 3, 4, 9]).unwrap();
    assert_eq!((left.reference_len, right.reference_len), (2, 3));
    assert_eq!(left.per(), 0.0);
    assert!(right.per() > 0.0);
    let s = right_half_per(&[vec![1, 2, 3, 4]], &[vec![1, 2, 3, 4]]).unwrap();
    assert_eq!((s.left.per(), s.right.per(), s.overall.per()), (0.0, 0.0, 0.0));
}

#[test]
fn alignment_rebuilds_the_hypothesis() {
    for a in all_sequences(2, 5) {
        for b in all_sequences(2, 5) {
            let ops = align(&a, &b);
            let mut rebuilt = Vec::new();
            let mut j = 0;
            for op in &ops {
                match op {
                    EditOp::Match { reference } => {
                        assert_eq!(a[*reference], b[j]);
                        rebuilt.push(b[j]);
                        j += 1;
                    }
                    EditOp::Substitute { .. } | EditOp::Insert { .. } => {
                        rebuilt.push(b[j]);
                        j += 1;
                    }
                    EditOp::Delete { .. } => {}
                }
            }
            assert_eq!(rebuilt, b);
            let consumed = ops.iter().filter(|o| !matches!(o, EditOp::Insert { .. })).count();
            assert_eq!(consumed, a.len());
        }
    }
}

#[test]
fn mel_distortion_halves_recombine() {
    let a = Tensor::matrix(5, 2, (0..10).map(|i| i as f64).collect()).unwrap();
    let b = Tensor::matrix(7, 2, (0..14).map(|i| (i as f64).sqrt()).collect()).unwrap();
    let d = MelDistortion::new(&a, &b).unwrap();
    assert_eq!(d.per_frame.len(), 5);
    let weighted = (2.0 * d.left + 3.0 * d.right) / 5.0;
    assert!((weighted - d.overall).abs() < 1e-9);
    assert_eq!(MelDistortion::new(&a, &a).unwrap().overall, 0.0);
    assert!(MelDistortion::new(&a, &Tensor::zeros(&[2, 3])).is_err());
}

#[test]
fn pgm_layout_and_degenerate_scaling() {
    let mut mel = Tensor::zeros(&[3, 80]);
    mel.data_mut()[79] = 2.0; // frame 0, top bin
    mel.data_mut()[80] = -2.0; // frame 1, bottom bin
    let bytes = spectrogram_pgm(&mel).unwrap();
    let header = b"P5\n3 80\n255\n";
    assert_eq!(&bytes[..header.len()], header);
    let px = &bytes[header.len()..];
    assert_eq!(px.len(), 3 * 80);
    assert_eq!(px[0], 255);
    assert_eq!(px[79 * 3 + 1], 0);
    assert_eq!(px[79 * 3], 128);

    let flat = spectrogram_pgm(&Tensor::matrix(4, 80, vec![0.7; 320]).unwrap()).unwrap();
    assert!(flat[header.len()..].iter().all(|&p| p == 0));

    let mut bad = mel.clone();
    bad.data_mut()[5] = f64::NAN;
    assert!(spectrogram_pgm(&bad).is_err());

    let dir = tempfile::tempdir().unwrap();
    let (p1, p2) = (dir.path().join("a.pgm"), dir.path().join("b.pgm"));
    render_spectrogram_image(&mel, &p1).unwrap();
    render_spectrogram_image(&mel.clone(), &p2).unwrap();
    assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    assert_eq!(std::fs::read(&p1).unwrap(), bytes);
    assert!(render_spectrogram_image(&mel, dir.path().join("missing/x.pgm")).is_err());
}

proptest! {
    #[test]
    fn halves_recombine_to_the_full_error_count(
        pairs in prop::collection::vec(
            (prop::collection::vec(0u8..4, 1..15), prop::collection::vec(0u8..4, 0..15)),
            1..8,
        )
    ) {
        let refs: Vec<Vec<u8>> = pairs.iter().map(|p| p.0.clone()).collect();
        let hyps: Vec<Vec<u8>> = pairs.iter().map(|p| p.1.clone()).collect();
        let s = right_half_per(&refs, &hyps).unwrap();
        prop_assert_eq!(s.left.errors() + s.right.errors(), s.overall.errors());
        prop_assert_eq!(s.left.reference_len + s.right.reference_len, s.overall.reference_len);
        let n = s.overall.reference_len as f64;
        let weighted = (s.left.reference_len as f64 * s.left.per() + s.right.reference_len as f64 * s.right.per()) / n;
        prop_assert!((weighted - s.overall.per()).abs() < 1e-12);
    }

    #[test]
    fn distance_is_symmetric_and_triangular(
        a in prop::collection::vec(0u8..3, 0..10),
        b in prop::collection::vec(0u8..3, 0..10),
        c in prop::collection::vec(0u8..3, 0..10),
    ) {
        prop_assert_eq!(edit_distance(&a, &b), edit_distance(&b, &a));
        prop_assert!(edit_distance(&a, &c) <= edit_distance(&a, &b) + edit_distance(&b, &c));
        prop_assert_eq!(edit_distance(&a, &b) == 0, a == b);
    }
}
