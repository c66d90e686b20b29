//! Online grammar inference over a repetitive token stream.
//!
//! Feeds the token sequence of a nested write loop (m rounds of n writes
//! plus an fsync) into the incremental grammar builder and prints the rules
//! it discovers. The grammar stays tiny no matter how large m and n get,
//! because repeats become rules and runs of the same symbol collapse into
//! one symbol with an exponent.

use tracegram::grammar::Grammar;

fn main() {
    let (m, n) = (6u32, 4u32);
    let write = 0u32;
    let fsync = 1u32;

    let mut grammar = Grammar::new();
    for _ in 0..m {
        for _ in 0..n {
            grammar.append(write);
        }
        grammar.append(fsync);
    }

    let expanded = grammar.expand().expect("grammar expands");
    println!(
        "ingested {} tokens ({} rounds of {} writes + fsync)",
        expanded.len(),
        m,
        n
    );
    println!(
        "grammar: {} rules, {} symbols total\n",
        grammar.rule_count(),
        grammar.total_symbols()
    );

    for (rule_id, body) in grammar.rules_view() {
        let rhs: Vec<String> = body
            .iter()
            .map(|sym| {
                let name = if sym.id >= 0 {
                    format!("t{}", sym.id)
                } else {
                    format!("R{}", -sym.id)
                };
                if sym.exp == 1 {
                    name
                } else {
                    format!("{}^{}", name, sym.exp)
                }
            })
            .collect();
        let lhs = if rule_id == -1 {
            "START".to_string()
        } else {
            format!("R{}", -rule_id)
        };
        println!("  {} -> {}", lhs, rhs.join(" "));
    }

    // The grammar is lossless: expanding it reproduces the input stream.
    let mut original = Vec::new();
    for _ in 0..m {
        original.extend(std::iter::repeat(write).take(n as usize));
        original.push(fsync);
    }
    assert_eq!(expanded, original);
    println!("\nexpansion matches the original stream exactly");

    // Doubling the repeat counts does not change the rule count.
    let mut bigger = Grammar::new();
    for _ in 0..m * 2 {
        for _ in 0..n * 2 {
            bigger.append(write);
        }
        bigger.append(fsync);
    }
    println!(
        "with m={} n={}: still {} rules, {} symbols",
        m * 2,
        n * 2,
        bigger.rule_count(),
        bigger.total_symbols()
    );
}
