//! Recorded provider sessions replayed through the remote interpreter.

use scenario_core::understanding::{
    interpret_offline, interpret_remote, RecordedTranscript, ScriptedClient, CORRECTIVE_SENTENCE,
};
use std::path::Path;

fn load(name: &str) -> RecordedTranscript {
    let path = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures/transcripts")
        .join(format!("{name}.json"));
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn replay_agrees_with_offline() {
    for name in ["following", "cut_in", "cut_out"] {
        let t = load(name);
        let client = ScriptedClient::from_transcript(&t);
        let (remote, transcript) = interpret_remote(&t.description, &client, 2).unwrap();
        assert_eq!(remote, interpret_offline(&t.description).unwrap(), "{name}");
        assert_eq!(transcript.exchanges.len(), t.responses.len());
        assert_eq!(transcript.to_recorded(t.model.clone()), t);
    }
}

#[test]
fn malformed_first_answer_is_corrected() {
    let t = load("cut_out");
    let client = ScriptedClient::from_transcript(&t);
    let (_, transcript) = interpret_remote(&t.description, &client, 1).unwrap();
    assert!(transcript.exchanges[0].error.is_some());
    let second = &client.requests()[1];
    assert_eq!(second.last().unwrap().content, CORRECTIVE_SENTENCE);
    assert_eq!(second[1].content, t.responses[0]);

    let client = ScriptedClient::from_transcript(&t);
    assert!(interpret_remote(&t.description, &client, 0).is_err());
}
