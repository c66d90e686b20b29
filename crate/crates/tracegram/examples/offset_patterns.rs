//! Folding strided file offsets into linear terms within one rank.
//!
//! An application that writes a file in fixed-size chunks produces offsets
//! 0, 4096, 8192, ... Every call would have a distinct signature if the raw
//! offset were part of it. The pattern store recognizes the arithmetic
//! progression and rewrites the offsets as `i*step + start`, so all calls
//! after the first two share a single signature.

use tracegram::pattern::{OffsetDecoder, OffsetPattern, PatternStore};

fn main() {
    let store = PatternStore::new();
    let key = b"write/off".to_vec();
    let chunk = 4096i64;

    println!("encoding offsets 0, 4096, ... for one call site:\n");
    let mut encoded = Vec::new();
    for i in 0..6 {
        let offset = i * chunk;
        let pattern = store.encode_offset(&key, offset);
        println!("  offset {:6} -> {:?}", offset, pattern);
        encoded.push(pattern);
    }

    // Calls 0 and 1 establish the progression; every later call collapses
    // onto the same iterator term, which is what lets the signature table
    // and grammar stay small.
    assert!(matches!(encoded[0], OffsetPattern::Literal(_)));
    assert!(matches!(encoded[1], OffsetPattern::IterLinear { .. }));
    assert_eq!(encoded[2], encoded[1]);
    assert_eq!(encoded[5], encoded[1]);

    // Decoding replays the same state machine and reproduces the raw
    // offsets exactly.
    let mut decoder = OffsetDecoder::new();
    let decoded: Vec<i64> = encoded
        .iter()
        .map(|p| decoder.decode(&key, p, 0))
        .collect();
    println!("\ndecoded offsets: {:?}", decoded);
    assert_eq!(decoded, vec![0, 4096, 8192, 12288, 16384, 20480]);

    // A jump that breaks the stride resets the run instead of corrupting it.
    let jump = store.encode_offset(&key, 1_000_000);
    let next = store.encode_offset(&key, 1_000_000 + chunk);
    println!("\nafter a seek to 1000000:");
    println!("  offset 1000000 -> {:?}", jump);
    println!("  offset {:7} -> {:?}", 1_000_000 + chunk, next);
    assert!(matches!(jump, OffsetPattern::Literal(_)));
    assert!(matches!(next, OffsetPattern::IterLinear { .. }));

    // Different call sites fold independently.
    let other = b"read/off".to_vec();
    let p = store.encode_offset(&other, 12345);
    assert!(matches!(p, OffsetPattern::Literal(_)));
    println!("\na different call site starts its own run: {:?}", p);
}
