//! Every text decoder returns `Ok` or `Err` on mangled input; none panics.
//! Seeds are the checked-in fuzz corpus.

use derlab::data::Dataset;
use derlab::experiment::{traces_from_csv, TrainConfig};
use derlab::network::Parameters;
use proptest::prelude::*;

const CSV: &str = include_str!("../../../fuzz/corpus/dataset_csv/cubic.csv");
const META: &str = include_str!("../../../fuzz/corpus/meta_toml/cubic.toml");
const CKPT: &str = include_str!("../../../fuzz/corpus/checkpoint/tiny.ckpt");
const CONFIG: &str = include_str!("../../../fuzz/corpus/config/cubic_der.toml");
const TRACE: &str = include_str!("../../../fuzz/corpus/trace_csv/pulse.csv");

fn decode_all(text: &str) {
    let _ = Dataset::samples_from_csv(text.as_bytes(), "t");
    let _ = Dataset::meta_from_toml(text, "t");
    let _ = traces_from_csv(text.as_bytes(), "t");
    if let Ok(cfg) = TrainConfig::from_toml_str(text, "t") {
        TrainConfig::from_toml_str(&cfg.to_toml(), "t").unwrap();
    }
    if let Ok(p) = Parameters::from_checkpoint_str(text, "t") {
        let again = Parameters::from_checkpoint_str(&p.to_checkpoint_string(), "t").unwrap();
        assert_eq!(again.to_checkpoint_string(), p.to_checkpoint_string());
    }
}

#[test]
fn seeds_decode() {
    assert_eq!(Dataset::samples_from_csv(CSV.as_bytes(), "t").unwrap().len(), 19);
    Dataset::meta_from_toml(META, "t").unwrap();
    Parameters::from_checkpoint_str(CKPT, "t").unwrap();
    TrainConfig::from_toml_str(CONFIG, "t").unwrap();
    assert_eq!(traces_from_csv(TRACE.as_bytes(), "t").unwrap().len(), 5);
}

#[test]
fn oversized_networks_are_rejected() {
    let huge = "derlab-checkpoint v1\ninput_dim 1\nhidden 4000000000 relu\nhidden 4000000000 relu\noutput_dim 4\nparams 1\n0\n";
    let e = Parameters::from_checkpoint_str(huge, "t").unwrap_err().to_string();
    assert!(e.contains("parameters"), "{e}");
    let wide = CONFIG.replacen("width = 64", "width = 4000000000", 1);
    let e = TrainConfig::from_toml_str(&wide, "t").unwrap_err().to_string();
    assert!(e.contains("parameters"), "{e}");
}

#[derive(Debug, Clone)]
enum Edit {
    Delete(usize, usize),
    Insert(usize, String),
    Replace(usize, char),
    Truncate(usize),
}

fn apply(seed: &str, edits: &[Edit]) -> String {
    let mut chars: Vec<char> = seed.chars().collect();
    for e in edits {
        let n = chars.len().max(1);
        match e {
            Edit::Delete(at, len) => {
                let at = at % n;
                let end = (at + len).min(chars.len());
                if at < end {
                    chars.drain(at..end);
                }
            }
            Edit::Insert(at, s) => {
                let at = (at % n).min(chars.len());
                chars.splice(at..at, s.chars());
            }
            Edit::Replace(at, c) => {
                if !chars.is_empty() {
                    chars[at % n] = *c;
                }
            }
            Edit::Truncate(at) => chars.truncate(at % n),
        }
    }
    chars.into_iter().collect()
}

fn edit() -> impl Strategy<Value = Edit> {
    let tokens = prop::sample::select(vec![
        ",",
        "\n",
        "=",
        "[",
        "]",
        "\"",
        "-",
        "e308",
        "NaN",
        "inf",
        "0",
        "params 0",
        "hidden 0 relu",
        "1e-400",
        "[[arch.hidden]]",
        "kind = \"momentum\"",
    ]);
    prop_oneof![
        (any::<usize>(), 1usize..20).prop_map(|(a, l)| Edit::Delete(a, l)),
        (any::<usize>(), tokens).prop_map(|(a, s)| Edit::Insert(a, s.to_string())),
        (any::<usize>(), any::<char>()).prop_map(|(a, c)| Edit::Replace(a, c)),
        any::<usize>().prop_map(Edit::Truncate),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn mutated_seeds_never_panic(
        which in 0usize..5,
        edits in prop::collection::vec(edit(), 1..6),
    ) {
        let seed = [CSV, META, CKPT, CONFIG, TRACE][which];
        decode_all(&apply(seed, &edits));
    }

    #[test]
    fn arbitrary_text_never_panics(text in ".{0,200}") {
        decode_all(&text);
    }
}
