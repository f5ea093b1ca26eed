//! Generators shared by the property and acceptance suites.
#![allow(dead_code)]

use proptest::prelude::*;
use rand::Rng;
use serde_json::{Map, Number, Value};

use pixreason::synth::{Cue, Media, SeedExample};
use pixreason::ToolCall;

/// Strings that stress the wire format: quotes, escapes, braces, tags.
pub fn tricky_string() -> impl Strategy<Value = String> {
    prop_oneof![
        "[a-z_]{0,12}",
        any::<String>(),
        Just("</tool_call>".to_string()),
        Just("{\"a\": [1,2]}".to_string()),
        Just("\\boxed{x}".to_string()),
        "[\"\\\\{}<>/ \n\t]{0,10}",
    ]
}

pub fn json_leaf() -> impl Strategy<Value = Value> {
    prop_oneof![
        Just(Value::Null),
        any::<bool>().prop_map(Value::Bool),
        any::<i64>().prop_map(Value::from),
        any::<u64>().prop_map(Value::from),
        any::<f64>()
            .prop_filter("finite", |f| f.is_finite())
            .prop_map(|f| Value::Number(Number::from_f64(f).expect("finite"))),
        tricky_string().prop_map(Value::String),
    ]
}

pub fn json_value() -> impl Strategy<Value = Value> {
    json_leaf().prop_recursive(3, 24, 4, |inner| {
        prop_oneof![
            prop::collection::vec(inner.clone(), 0..4).prop_map(Value::Array),
            prop::collection::vec((tricky_string(), inner), 0..4)
                .prop_map(|kv| Value::Object(kv.into_iter().collect::<Map<String, Value>>())),
        ]
    })
}

pub fn tool_call() -> impl Strategy<Value = ToolCall> {
    let name = prop_oneof![
        Just("crop_image".to_string()),
        Just("select_frames".to_string()),
        // The parser trims names, so only canonical ones round-trip.
        tricky_string().prop_filter("canonical name", |s| !s.is_empty() && s.trim() == s),
    ];
    let args = prop::collection::vec((tricky_string(), json_value()), 0..5);
    (name, args).prop_map(|(name, kv)| ToolCall { name, arguments: kv.into_iter().collect() })
}

/// Random seed whose cue leaves room for every kind of distractor.
pub fn random_seed<R: Rng>(rng: &mut R, n: usize, video: bool) -> SeedExample {
    let (media, cue) = if video {
        let frames = rng.random_range(9..=32);
        let k = rng.random_range(1..=4);
        let mut cue: Vec<usize> = rand::seq::index::sample(rng, frames, k).into_vec();
        cue.sort_unstable();
        (Media::Video { frames, width: 64, height: 48 }, Cue::Frames(cue))
    } else {
        let (w, h) = (rng.random_range(200..=1600), rng.random_range(200..=1600));
        let (bw, bh) = (rng.random_range(10..=w / 4), rng.random_range(10..=h / 4));
        let x1 = rng.random_range(0..=w - bw);
        let y1 = rng.random_range(0..=h - bh);
        let cue = [x1, y1, x1 + bw, y1 + bh].map(f64::from);
        (Media::Image { width: w, height: h }, Cue::Bbox(cue))
    };
    SeedExample {
        id: format!("seed-{n}"),
        question: format!("Question {n}?"),
        gold: ["A", "B", "C", "D"][n % 4].to_string(),
        media,
        cue,
        focus: None,
        media_path: None,
    }
}
