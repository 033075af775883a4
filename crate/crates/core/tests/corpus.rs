mod common;

use guti_core::corpus::{acrostic_transform, deserialize, parse_body, serialize, Poem, MARKERS};
use guti_core::tokenizer::{build_vocab, decode, encode, encode_sample, BOS, EOS};
use guti_core::validator::{validate, RuleId, ValidateOptions};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn every_fixture_is_well_formed() {
    for p in common::fixtures() {
        let r = validate(&p, &common::catalog(), common::table(), ValidateOptions::default()).unwrap();
        assert!(r.well_formed, "{:?}: {:?}", p.source_id, r.failures().collect::<Vec<_>>());
    }
}

#[test]
fn single_character_edits_break_fixtures() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for p in common::fixtures() {
        for t in 0..20 {
            let m = common::mutate(&p, t % 2 == 0, &mut rng);
            assert!(!common::well_formed(&m), "{:?} accepted {}", p.source_id, m.body_text());
        }
    }
}

#[test]
fn couplets_pair() {
    common::criterion_pairing().unwrap();
}

#[test]
fn broken_pairing_is_reported() {
    let mut p = common::fixture("t4-4");
    p.body[3].chars[0] = p.body[2].chars[0];
    assert!(!common::pairing_passes(&p));
    let r = validate(&p, &common::catalog(), common::table(), ValidateOptions::default()).unwrap();
    assert!(r.rule(RuleId::Pairing).any(|x| !x.passed()));
}

#[test]
fn acrostic_of_quiet_night() {
    let cat = common::catalog();
    let p = acrostic_transform(&common::fixture("s2-1"), &cat).unwrap();
    assert_eq!(p.theme, "床疑举低");
    assert_eq!(
        serialize(&p, &cat).unwrap().text,
        "五言绝句(格式)床疑举低(藏头诗)床前明月光，疑是地上霜。举头望明月，低头思故乡。"
    );
    assert!(common::well_formed(&p));
}

#[test]
fn toy_corpus_validates() {
    let poems = common::toy_poems();
    assert_eq!(poems.len(), 50);
    for p in &poems {
        assert!(common::well_formed(p), "{}", p.theme);
    }
}

#[test]
fn round_trips() {
    common::criterion_round_trips().unwrap();
}

#[test]
fn sample_encoding_is_bos_text_eos() {
    let cat = common::catalog();
    let samples = common::samples(&common::fixtures());
    let vocab = build_vocab(&samples, 1).unwrap();
    for s in &samples {
        let ids = encode_sample(s, &vocab);
        assert_eq!(ids.first(), Some(&BOS));
        assert_eq!(ids.last(), Some(&EOS));
        assert_eq!(ids.len(), s.token_len() + 2);
        assert_eq!(decode(&ids[1..ids.len() - 1], &vocab).unwrap(), s.text);
        assert!(deserialize(&s.text, &cat).is_ok());
    }
}

fn line() -> impl Strategy<Value = String> {
    prop::collection::vec(prop::char::range('\u{4e00}', '\u{4e80}'), 1..9).prop_map(|c| c.into_iter().collect())
}

proptest! {
    #[test]
    fn serialize_deserialize_identity(
        lines in prop::collection::vec((line(), any::<bool>()), 1..10),
        theme in prop::collection::vec(prop::char::range('\u{4e00}', '\u{4e80}'), 0..6),
        form in prop::sample::select(vec!["五绝", "七律", "水调歌头", "忆江南"]),
        acrostic in any::<bool>(),
    ) {
        let cat = common::catalog();
        let body: String = lines.iter().map(|(l, comma)| format!("{l}{}", if *comma { '，' } else { '。' })).collect();
        let mut p = Poem::new(form, theme.into_iter().collect::<String>(), &body).unwrap();
        p.acrostic = acrostic;
        let s = serialize(&p, &cat).unwrap();
        prop_assert!(MARKERS.iter().any(|m| s.text.contains(m)));
        prop_assert_eq!(deserialize(&s.text, &cat).unwrap(), p);
        prop_assert_eq!(parse_body(&body).unwrap().len(), lines.len());
        let vocab = build_vocab(std::slice::from_ref(&s), 1).unwrap();
        prop_assert_eq!(decode(&encode(&s.text, &vocab), &vocab).unwrap(), s.text);
    }
}
