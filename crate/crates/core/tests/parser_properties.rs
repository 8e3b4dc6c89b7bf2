mod common;

use miivgraph::parser::{emit_model, isomorphic, parse, parse_model, Severity};
use miivgraph::random::ModelShape;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::*;

fn shape() -> ModelShape {
    ModelShape { latents: (1, 4), observed: (2, 8), fixed_prob: 0.15, label_prob: 0.15, cov_prob: 0.15, ..Default::default() }
}

#[test]
fn first_indicator_scales_by_default() {
    let m = parse_model("f =~ b + a + c\n").unwrap();
    assert_eq!(m.scaling_indicator(id(&m, "f")), Some(id(&m, "b")));
    let m = parse_model("f =~ c\nf =~ a + b\n").unwrap();
    assert_eq!(m.scaling_indicator(id(&m, "f")), Some(id(&m, "c")));
}

#[test]
fn diagnostics_point_at_the_offending_token() {
    let out = parse("l1 =~ y1 + y2\ny3 ~ l1 +\n");
    let d = out.diagnostics.iter().find(|d| d.severity == Severity::Error).unwrap();
    assert_eq!(d.line, 2);
    let out = parse("y1 ~ y2 ?? y3\n");
    assert!(out.model.is_none());
    assert!(out.diagnostics[0].to_string().starts_with("1:"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn emit_then_parse_is_isomorphic(seed in any::<u64>()) {
        let m = model_from_seed(seed, &shape());
        let text = emit_model(&m).unwrap();
        let back = parse_model(&text).map_err(|d| TestCaseError::fail(format!("{d:?}\n{text}")))?;
        prop_assert!(isomorphic(&m, &back), "{}", text);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn whitespace_does_not_matter(seed in any::<u64>(), pad in prop::collection::vec(0usize..3, 64)) {
        let m = model_from_seed(seed, &shape());
        let text = emit_model(&m).unwrap();
        let pads = ["", " ", "\t  "];
        let mut spaced = String::new();
        let mut k = 0;
        for ch in text.chars() {
            if matches!(ch, '+' | '*' | '~' | ' ') {
                spaced.push_str(pads[pad[k % pad.len()]]);
                k += 1;
            }
            spaced.push(ch);
        }
        let spaced = spaced.replace("=  ~", "=~").replace("=\t  ~", "=~").replace("= ~", "=~");
        let spaced = spaced.replace("~  ~", "~~").replace("~\t  ~", "~~").replace("~ ~", "~~");
        let back = parse_model(&format!("\n  {spaced}\n\n")).map_err(|d| TestCaseError::fail(format!("{d:?}\n{spaced}")))?;
        prop_assert!(isomorphic(&m, &back));
    }

    #[test]
    fn statement_order_does_not_matter(seed in any::<u64>()) {
        let m = model_from_seed(seed, &shape());
        let text = emit_model(&m).unwrap();
        let mut lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
        lines.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let shuffled = lines.join("\n");
        let back = parse_model(&shuffled).map_err(|d| TestCaseError::fail(format!("{d:?}\n{shuffled}")))?;
        prop_assert!(isomorphic(&m, &back), "{}", shuffled);
    }
}
