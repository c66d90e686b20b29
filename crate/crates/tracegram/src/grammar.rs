//! Online context-free grammar inference over terminal streams, in the
//! Sequitur family, extended with run-length exponents.
//!
//! Symbols carry an exponent, so a loop that issues the same call n times
//! costs one symbol instead of n, and nested loops collapse to nested rules
//! with exponents. The builder maintains, after every append:
//!
//! * coalescing: no two adjacent symbols in any body share an id,
//! * digram uniqueness: no (symbol, symbol) pair, exponents included,
//!   appears more than once across all bodies; a two-symbol rule body is the
//!   canonical home of its pair,
//! * rule utility: every non-start rule is used at least twice, where a
//!   reference with exponent e counts e times; a rule whose usage drops to a
//!   single plain reference is inlined away.
//!
//! Rule ids are negative, assigned downward from the start rule's -1, and
//! never renumbered, so a grammar is a deterministic function of its append
//! sequence. Terminal ids are the non-negative signature table indices.

use std::collections::{HashMap, HashSet};

use thiserror::Error;

/// Id of the start rule.
pub const START_RULE_ID: i32 = -1;

/// Default ceiling on expansion length.
pub const DEFAULT_EXPANSION_LIMIT: u64 = 1 << 32;

const NIL: u32 = u32::MAX;

/// One body symbol: a terminal (`id >= 0`) or rule reference (`id < 0`),
/// repeated `exp` times.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Symbol {
    pub id: i32,
    pub exp: u32,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GrammarError {
    #[error("expansion exceeds limit of {limit} terminals")]
    ExpansionLimit { limit: u64 },
    #[error("rule {rule} participates in a reference cycle")]
    CyclicRules { rule: i32 },
    #[error("reference to undefined rule {rule}")]
    UndefinedRule { rule: i32 },
    #[error("terminal {terminal} has no entry in the remap table")]
    IncompleteMapping { terminal: i32 },
    #[error("malformed grammar at byte {at}: {reason}")]
    Malformed { at: usize, reason: &'static str },
}

#[derive(Debug, Clone, Copy)]
struct Node {
    id: i32,
    exp: u32, // 0 marks a rule's guard node
    prev: u32,
    next: u32,
    stamp: u32,
    alive: bool,
}

#[derive(Debug, Default)]
struct RuleUse {
    count: u64,
    sites: HashSet<u32>,
}

type DigramKey = (i32, u32, i32, u32);

/// A grammar under construction plus the indexes that keep appends cheap.
#[derive(Debug)]
pub struct Grammar {
    nodes: Vec<Node>,
    free: Vec<u32>,
    /// rule id -> guard node of its circular body list
    rules: HashMap<i32, u32>,
    /// digram -> left node of its unique occurrence
    digrams: HashMap<DigramKey, u32>,
    uses: HashMap<i32, RuleUse>,
    next_rule: i32,
    scratch: Vec<(u32, u32)>,
}

impl Default for Grammar {
    fn default() -> Self {
        Self::new()
    }
}

impl Grammar {
    pub fn new() -> Self {
        let mut g = Grammar {
            nodes: Vec::new(),
            free: Vec::new(),
            rules: HashMap::new(),
            digrams: HashMap::new(),
            uses: HashMap::new(),
            next_rule: START_RULE_ID,
            scratch: Vec::new(),
        };
        g.fresh_rule();
        g
    }

    // ---- slab primitives ----------------------------------------------

    fn alloc(&mut self, id: i32, exp: u32) -> u32 {
        if let Some(n) = self.free.pop() {
            let stamp = self.nodes[n as usize].stamp;
            self.nodes[n as usize] = Node {
                id,
                exp,
                prev: NIL,
                next: NIL,
                stamp,
                alive: true,
            };
            n
        } else {
            self.nodes.push(Node {
                id,
                exp,
                prev: NIL,
                next: NIL,
                stamp: 0,
                alive: true,
            });
            (self.nodes.len() - 1) as u32
        }
    }

    fn free_slot(&mut self, n: u32) {
        let node = &mut self.nodes[n as usize];
        node.alive = false;
        node.stamp = node.stamp.wrapping_add(1);
        self.free.push(n);
    }

    fn node(&self, n: u32) -> &Node {
        &self.nodes[n as usize]
    }

    fn is_guard(&self, n: u32) -> bool {
        self.node(n).exp == 0
    }

    fn link(&mut self, a: u32, b: u32) {
        self.nodes[a as usize].next = b;
        self.nodes[b as usize].prev = a;
    }

    fn fresh_rule(&mut self) -> i32 {
        let id = self.next_rule;
        self.next_rule -= 1;
        let guard = self.alloc(id, 0);
        self.link(guard, guard);
        self.rules.insert(id, guard);
        if id != START_RULE_ID {
            self.uses.insert(id, RuleUse::default());
        }
        id
    }

    /// Create a body symbol node, maintaining rule use counts.
    fn alloc_symbol(&mut self, id: i32, exp: u32) -> u32 {
        let n = self.alloc(id, exp);
        if id < 0 {
            let u = self.uses.entry(id).or_default();
            u.count += exp as u64;
            u.sites.insert(n);
        }
        n
    }

    /// Remove a body symbol node, maintaining rule use counts. Rules whose
    /// usage changed are appended to `dropped` for a later utility check.
    fn delete_symbol(&mut self, n: u32, dropped: &mut Vec<i32>) {
        let Node { id, exp, .. } = *self.node(n);
        if id < 0 {
            if let Some(u) = self.uses.get_mut(&id) {
                u.count -= exp as u64;
                u.sites.remove(&n);
                dropped.push(id);
            }
        }
        self.free_slot(n);
    }

    // ---- digram index -------------------------------------------------

    fn digram_at(&self, left: u32) -> Option<DigramKey> {
        if self.is_guard(left) {
            return None;
        }
        let right = self.node(left).next;
        if self.is_guard(right) {
            return None;
        }
        let l = self.node(left);
        let r = self.node(right);
        Some((l.id, l.exp, r.id, r.exp))
    }

    /// Drop the index entry for the digram starting at `left`, if this
    /// occurrence owns it.
    fn unlist_digram(&mut self, left: u32) {
        if let Some(key) = self.digram_at(left) {
            if self.digrams.get(&key) == Some(&left) {
                self.digrams.remove(&key);
            }
        }
    }

    // ---- worklist machinery -------------------------------------------

    fn push_work(&self, work: &mut Vec<(u32, u32)>, n: u32) {
        work.push((n, self.node(n).stamp));
    }

    fn drain(&mut self, work: &mut Vec<(u32, u32)>) {
        while let Some((n, stamp)) = work.pop() {
            if n as usize >= self.nodes.len() {
                continue;
            }
            let node = self.node(n);
            if !node.alive || node.stamp != stamp {
                continue;
            }
            self.check_digram(n, work);
        }
    }

    /// Re-establish the invariants for the digram starting at `n`.
    fn check_digram(&mut self, n: u32, work: &mut Vec<(u32, u32)>) {
        if self.is_guard(n) {
            return;
        }
        let right = self.node(n).next;
        if self.is_guard(right) {
            return;
        }
        if self.node(n).id == self.node(right).id {
            let merged = self.coalesce(n, right);
            let p = self.node(merged).prev;
            if !self.is_guard(p) {
                self.push_work(work, p);
            }
            self.push_work(work, merged);
            return;
        }
        let key = self.digram_at(n).unwrap();
        match self.digrams.get(&key) {
            None => {
                self.digrams.insert(key, n);
            }
            Some(&m) if m == n => {}
            Some(&m) => {
                debug_assert!(self.node(m).alive);
                debug_assert_eq!(self.digram_at(m), Some(key));
                let mut dropped = Vec::new();
                if let Some(rule) = self.complete_body_of(m) {
                    self.substitute(n, rule, &mut dropped, work);
                } else if let Some(rule) = self.complete_body_of(n) {
                    self.digrams.insert(key, n);
                    self.substitute(m, rule, &mut dropped, work);
                } else {
                    let rule = self.fresh_rule();
                    let guard = self.rules[&rule];
                    let x = self.alloc_symbol(key.0, key.1);
                    let y = self.alloc_symbol(key.2, key.3);
                    self.link(guard, x);
                    self.link(x, y);
                    self.link(y, guard);
                    self.digrams.insert(key, x);
                    self.substitute(m, rule, &mut dropped, work);
                    self.substitute(n, rule, &mut dropped, work);
                }
                for id in dropped {
                    self.apply_utility(id, work);
                }
            }
        }
    }

    /// If the digram at `m` is the entire body of a non-start rule, that
    /// rule's id.
    fn complete_body_of(&self, m: u32) -> Option<i32> {
        let p = self.node(m).prev;
        if !self.is_guard(p) {
            return None;
        }
        let m2 = self.node(m).next;
        if self.is_guard(m2) || self.node(m2).next != p {
            return None;
        }
        let rule = self.node(p).id;
        // The start rule is never referenced from a body.
        (rule != START_RULE_ID).then_some(rule)
    }

    /// Merge adjacent same-id symbols `a`,`b` into `a`; returns `a`.
    fn coalesce(&mut self, a: u32, b: u32) -> u32 {
        let p = self.node(a).prev;
        let nx = self.node(b).next;
        if !self.is_guard(p) {
            self.unlist_digram(p);
        }
        self.unlist_digram(a);
        self.unlist_digram(b);
        let Node { id, exp: eb, .. } = *self.node(b);
        if id < 0 {
            if let Some(u) = self.uses.get_mut(&id) {
                // Usage moves from b onto a; the total is unchanged.
                u.sites.remove(&b);
            }
        }
        self.free_slot(b);
        self.link(a, nx);
        self.nodes[a as usize].exp = self.nodes[a as usize]
            .exp
            .checked_add(eb)
            .expect("symbol exponent overflow");
        a
    }

    /// Replace the digram occurrence starting at `left` with a reference to
    /// `rule`.
    fn substitute(
        &mut self,
        left: u32,
        rule: i32,
        dropped: &mut Vec<i32>,
        work: &mut Vec<(u32, u32)>,
    ) {
        let right = self.node(left).next;
        let p = self.node(left).prev;
        let nx = self.node(right).next;
        if !self.is_guard(p) {
            self.unlist_digram(p);
        }
        self.unlist_digram(left);
        self.unlist_digram(right);
        self.delete_symbol(left, dropped);
        self.delete_symbol(right, dropped);
        let d = self.alloc_symbol(rule, 1);
        self.link(p, d);
        self.link(d, nx);
        if !self.is_guard(p) {
            self.push_work(work, p);
        }
        self.push_work(work, d);
    }

    /// Enforce rule utility for `id` after its usage changed.
    fn apply_utility(&mut self, id: i32, work: &mut Vec<(u32, u32)>) {
        if id == START_RULE_ID {
            return;
        }
        let Some(u) = self.uses.get(&id) else { return };
        match u.count {
            0 => self.delete_rule(id, work),
            1 => {
                let site = *u.sites.iter().next().unwrap();
                self.inline_at(site, id, work);
            }
            _ => {}
        }
    }

    /// Splice `rule`'s body over its last remaining reference site.
    fn inline_at(&mut self, site: u32, rule: i32, work: &mut Vec<(u32, u32)>) {
        let guard = self.rules[&rule];
        let first = self.node(guard).next;
        let last = self.node(guard).prev;
        let p = self.node(site).prev;
        let nx = self.node(site).next;
        if !self.is_guard(p) {
            self.unlist_digram(p);
        }
        self.unlist_digram(site);
        let mut dropped = Vec::new();
        self.delete_symbol(site, &mut dropped);
        self.rules.remove(&rule);
        self.uses.remove(&rule);
        if first == guard {
            // Empty body: the reference vanishes entirely.
            self.link(p, nx);
        } else {
            self.link(p, first);
            self.link(last, nx);
        }
        self.free_slot(guard);
        if !self.is_guard(p) {
            self.push_work(work, p);
        }
        if first != guard {
            self.push_work(work, first);
            self.push_work(work, last);
        }
        for id in dropped {
            if id != rule {
                self.apply_utility(id, work);
            }
        }
    }

    /// Remove a rule nobody references any more, body and all.
    fn delete_rule(&mut self, rule: i32, work: &mut Vec<(u32, u32)>) {
        let Some(guard) = self.rules.remove(&rule) else { return };
        self.uses.remove(&rule);
        let mut dropped = Vec::new();
        let mut cur = self.node(guard).next;
        while cur != guard {
            let next = self.node(cur).next;
            self.unlist_digram(cur);
            self.delete_symbol(cur, &mut dropped);
            cur = next;
        }
        self.free_slot(guard);
        for id in dropped {
            if id != rule {
                self.apply_utility(id, work);
            }
        }
    }

    // ---- public construction API --------------------------------------

    /// Append one terminal to the stream.
    ///
    /// Amortized constant time. A terminal equal to the current tail of the
    /// start rule bumps the tail's exponent instead of growing the body.
    pub fn append(&mut self, terminal: u32) {
        assert!(terminal <= i32::MAX as u32, "terminal id out of range");
        let id = terminal as i32;
        let guard = self.rules[&START_RULE_ID];
        let last = self.node(guard).prev;
        let mut work = std::mem::take(&mut self.scratch);
        if last != guard && self.node(last).id == id {
            let p = self.node(last).prev;
            if !self.is_guard(p) {
                self.unlist_digram(p);
            }
            self.nodes[last as usize].exp = self.nodes[last as usize]
                .exp
                .checked_add(1)
                .expect("symbol exponent overflow");
            if !self.is_guard(p) {
                self.push_work(&mut work, p);
            }
        } else {
            let n = self.alloc(id, 1);
            self.link(last, n);
            self.link(n, guard);
            if last != guard {
                self.push_work(&mut work, last);
            }
        }
        self.drain(&mut work);
        self.scratch = work;
    }

    pub fn append_all(&mut self, terminals: impl IntoIterator<Item = u32>) {
        for t in terminals {
            self.append(t);
        }
    }

    // ---- views ---------------------------------------------------------

    pub fn rule_count(&self) -> usize {
        self.rules.len()
    }

    /// Number of symbols across all rule bodies.
    pub fn total_symbols(&self) -> usize {
        self.rules
            .values()
            .map(|&guard| {
                let mut n = 0;
                let mut cur = self.node(guard).next;
                while cur != guard {
                    n += 1;
                    cur = self.node(cur).next;
                }
                n
            })
            .sum()
    }

    /// All rules as `(id, body)`, start rule first, then by creation order.
    pub fn rules_view(&self) -> Vec<(i32, Vec<Symbol>)> {
        let mut ids: Vec<i32> = self.rules.keys().copied().collect();
        ids.sort_unstable_by_key(|&id| std::cmp::Reverse(id));
        ids.iter()
            .map(|&id| {
                let guard = self.rules[&id];
                let mut body = Vec::new();
                let mut cur = self.node(guard).next;
                while cur != guard {
                    let n = self.node(cur);
                    body.push(Symbol { id: n.id, exp: n.exp });
                    cur = n.next;
                }
                (id, body)
            })
            .collect()
    }

    // ---- expansion -----------------------------------------------------

    /// The full terminal stream this grammar represents.
    pub fn expand(&self) -> Result<Vec<u32>, GrammarError> {
        self.expand_with_limit(DEFAULT_EXPANSION_LIMIT)
    }

    /// Expansion with an explicit ceiling on output length, as a guard
    /// against damaged or hostile grammars.
    pub fn expand_with_limit(&self, limit: u64) -> Result<Vec<u32>, GrammarError> {
        struct Frame {
            guard: u32,
            cursor: u32,
            reps_left: u32,
            rule: i32,
        }
        let mut out: Vec<u32> = Vec::new();
        let mut on_stack: HashSet<i32> = HashSet::new();
        let mut stack: Vec<Frame> = Vec::new();
        let start_guard = *self
            .rules
            .get(&START_RULE_ID)
            .ok_or(GrammarError::UndefinedRule { rule: START_RULE_ID })?;
        on_stack.insert(START_RULE_ID);
        stack.push(Frame {
            guard: start_guard,
            cursor: self.node(start_guard).next,
            reps_left: 1,
            rule: START_RULE_ID,
        });
        while let Some(frame) = stack.last_mut() {
            if frame.cursor == frame.guard {
                frame.reps_left -= 1;
                if frame.reps_left == 0 {
                    on_stack.remove(&frame.rule);
                    stack.pop();
                } else {
                    frame.cursor = self.node(frame.guard).next;
                }
                continue;
            }
            let Node { id, exp, next, .. } = *self.node(frame.cursor);
            frame.cursor = next;
            if id >= 0 {
                let new_len = out.len() as u64 + exp as u64;
                if new_len > limit {
                    return Err(GrammarError::ExpansionLimit { limit });
                }
                out.extend(std::iter::repeat(id as u32).take(exp as usize));
            } else {
                if on_stack.contains(&id) {
                    return Err(GrammarError::CyclicRules { rule: id });
                }
                let guard = *self
                    .rules
                    .get(&id)
                    .ok_or(GrammarError::UndefinedRule { rule: id })?;
                on_stack.insert(id);
                stack.push(Frame {
                    guard,
                    cursor: self.node(guard).next,
                    reps_left: exp,
                    rule: id,
                });
            }
        }
        Ok(out)
    }

    /// Expansion length without materializing the stream.
    pub fn expanded_len(&self) -> Result<u128, GrammarError> {
        let mut memo: HashMap<i32, u128> = HashMap::new();
        let mut visiting: HashSet<i32> = HashSet::new();
        // Iterative depth-first walk; Enter computes children, Exit sums.
        enum Step {
            Enter(i32),
            Exit(i32),
        }
        let mut stack = vec![Step::Enter(START_RULE_ID)];
        while let Some(step) = stack.pop() {
            match step {
                Step::Enter(rule) => {
                    if memo.contains_key(&rule) {
                        continue;
                    }
                    if !visiting.insert(rule) {
                        return Err(GrammarError::CyclicRules { rule });
                    }
                    stack.push(Step::Exit(rule));
                    let guard = *self
                        .rules
                        .get(&rule)
                        .ok_or(GrammarError::UndefinedRule { rule })?;
                    let mut cur = self.node(guard).next;
                    while cur != guard {
                        let n = self.node(cur);
                        if n.id < 0 {
                            if visiting.contains(&n.id) && !memo.contains_key(&n.id) {
                                return Err(GrammarError::CyclicRules { rule: n.id });
                            }
                            stack.push(Step::Enter(n.id));
                        }
                        cur = n.next;
                    }
                }
                Step::Exit(rule) => {
                    visiting.remove(&rule);
                    let guard = self.rules[&rule];
                    let mut len: u128 = 0;
                    let mut cur = self.node(guard).next;
                    while cur != guard {
                        let n = self.node(cur);
                        let part = if n.id >= 0 {
                            n.exp as u128
                        } else {
                            memo[&n.id].saturating_mul(n.exp as u128)
                        };
                        len = len.saturating_add(part);
                        cur = n.next;
                    }
                    memo.insert(rule, len);
                }
            }
        }
        Ok(memo[&START_RULE_ID])
    }

    // ---- serialization -------------------------------------------------

    /// Canonical little-endian byte form: rule count, then per rule (start
    /// first, then creation order): rule id, symbol count, and each symbol
    /// as (id, exponent). Two grammars are interchangeable exactly when
    /// their byte forms are equal.
    pub fn serialize(&self) -> Vec<u8> {
        let rules = self.rules_view();
        let mut out = Vec::new();
        out.extend_from_slice(&(rules.len() as u32).to_le_bytes());
        for (id, body) in &rules {
            out.extend_from_slice(&id.to_le_bytes());
            out.extend_from_slice(&(body.len() as u32).to_le_bytes());
            for sym in body {
                out.extend_from_slice(&sym.id.to_le_bytes());
                out.extend_from_slice(&sym.exp.to_le_bytes());
            }
        }
        out
    }

    /// Parse a serialized grammar; offsets in errors are relative to
    /// `bytes`. The result supports expansion and re-serialization.
    pub fn deserialize(bytes: &[u8]) -> Result<Grammar, GrammarError> {
        let read_u32 = |at: usize| -> Result<u32, GrammarError> {
            bytes
                .get(at..at + 4)
                .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
                .ok_or(GrammarError::Malformed {
                    at,
                    reason: "truncated",
                })
        };
        let rule_count = read_u32(0)? as usize;
        if rule_count > bytes.len() / 8 {
            return Err(GrammarError::Malformed {
                at: 0,
                reason: "rule count larger than file can hold",
            });
        }
        let mut rules = Vec::with_capacity(rule_count);
        let mut at = 4usize;
        for _ in 0..rule_count {
            let id = read_u32(at)? as i32;
            let count = read_u32(at + 4)? as usize;
            at += 8;
            if id >= 0 {
                return Err(GrammarError::Malformed {
                    at,
                    reason: "rule id is not negative",
                });
            }
            if count > (bytes.len() - at.min(bytes.len())) / 8 {
                return Err(GrammarError::Malformed {
                    at,
                    reason: "symbol count larger than file can hold",
                });
            }
            let mut body = Vec::with_capacity(count);
            for _ in 0..count {
                let sym_id = read_u32(at)? as i32;
                let exp = read_u32(at + 4)?;
                if exp == 0 {
                    return Err(GrammarError::Malformed {
                        at: at + 4,
                        reason: "zero exponent",
                    });
                }
                body.push(Symbol { id: sym_id, exp });
                at += 8;
            }
            rules.push((id, body));
        }
        if at != bytes.len() {
            return Err(GrammarError::Malformed {
                at,
                reason: "trailing bytes",
            });
        }
        Grammar::from_rules(rules)
    }

    /// Build a grammar directly from rule bodies.
    ///
    /// Bodies are taken as-is (no invariant repair); every referenced rule
    /// must be defined and the start rule present.
    pub fn from_rules(rules: Vec<(i32, Vec<Symbol>)>) -> Result<Grammar, GrammarError> {
        let defined: HashSet<i32> = rules.iter().map(|(id, _)| *id).collect();
        if defined.len() != rules.len() {
            return Err(GrammarError::Malformed {
                at: 0,
                reason: "duplicate rule id",
            });
        }
        if !defined.contains(&START_RULE_ID) {
            return Err(GrammarError::UndefinedRule { rule: START_RULE_ID });
        }
        let mut g = Grammar {
            nodes: Vec::new(),
            free: Vec::new(),
            rules: HashMap::new(),
            digrams: HashMap::new(),
            uses: HashMap::new(),
            next_rule: rules.iter().map(|(id, _)| *id).min().unwrap_or(START_RULE_ID) - 1,
            scratch: Vec::new(),
        };
        for (id, body) in &rules {
            for sym in body {
                if sym.id < 0 && !defined.contains(&sym.id) {
                    return Err(GrammarError::UndefinedRule { rule: sym.id });
                }
                if sym.exp == 0 {
                    return Err(GrammarError::Malformed {
                        at: 0,
                        reason: "zero exponent",
                    });
                }
            }
            let guard = g.alloc(*id, 0);
            g.link(guard, guard);
            g.rules.insert(*id, guard);
            if *id != START_RULE_ID {
                g.uses.entry(*id).or_default();
            }
            for sym in body {
                let n = g.alloc_symbol(sym.id, sym.exp);
                let last = g.node(guard).prev;
                g.link(last, n);
                g.link(n, guard);
            }
        }
        g.rebuild_digram_index();
        Ok(g)
    }

    /// Rewrite every terminal id through `map` (old id -> `map[old]`),
    /// then re-establish the grammar invariants.
    ///
    /// The expansion of the result is the pointwise image of the input's
    /// expansion. A non-injective map may fuse previously distinct adjacent
    /// symbols or digrams; those are re-coalesced and re-deduplicated.
    pub fn remap_terminals(&self, map: &[u32]) -> Result<Grammar, GrammarError> {
        let mut rules = self.rules_view();
        for (_, body) in rules.iter_mut() {
            for sym in body.iter_mut() {
                if sym.id >= 0 {
                    let new = map
                        .get(sym.id as usize)
                        .ok_or(GrammarError::IncompleteMapping { terminal: sym.id })?;
                    sym.id = *new as i32;
                }
            }
        }
        let mut g = Grammar::from_rules(rules)?;
        let injective = {
            let mut seen = HashSet::new();
            map.iter().all(|v| seen.insert(*v))
        };
        if !injective {
            g.settle();
        }
        Ok(g)
    }

    /// Index every digram of an invariant-clean grammar.
    fn rebuild_digram_index(&mut self) {
        self.digrams.clear();
        let mut ids: Vec<i32> = self.rules.keys().copied().collect();
        ids.sort_unstable_by_key(|&id| std::cmp::Reverse(id));
        for id in ids {
            let guard = self.rules[&id];
            let mut cur = self.node(guard).next;
            while cur != guard {
                if let Some(key) = self.digram_at(cur) {
                    self.digrams.entry(key).or_insert(cur);
                }
                cur = self.node(cur).next;
            }
        }
    }

    /// Repair all invariants from scratch: coalesce adjacent equal ids,
    /// deduplicate digrams, enforce utility. Each pass that changes the
    /// grammar shrinks it, so this terminates.
    fn settle(&mut self) {
        loop {
            // Coalesce adjacent same-id symbols everywhere.
            let mut ids: Vec<i32> = self.rules.keys().copied().collect();
            ids.sort_unstable_by_key(|&id| std::cmp::Reverse(id));
            for id in &ids {
                let guard = self.rules[id];
                let mut cur = self.node(guard).next;
                while cur != guard {
                    let next = self.node(cur).next;
                    if next != guard && self.node(cur).id == self.node(next).id {
                        self.digrams.clear();
                        self.coalesce(cur, next);
                        // Stay on cur; it may coalesce again.
                    } else {
                        cur = next;
                    }
                }
            }
            // Find one duplicated digram and resolve it.
            self.digrams.clear();
            let mut duplicate: Option<(u32, u32)> = None;
            'scan: for id in &ids {
                let Some(&guard) = self.rules.get(id) else { continue };
                let mut cur = self.node(guard).next;
                while cur != guard {
                    if let Some(key) = self.digram_at(cur) {
                        if let Some(&m) = self.digrams.get(&key) {
                            duplicate = Some((m, cur));
                            break 'scan;
                        }
                        self.digrams.insert(key, cur);
                    }
                    cur = self.node(cur).next;
                }
            }
            if let Some((m, n)) = duplicate {
                let mut work = Vec::new();
                self.check_digram(n, &mut work);
                let _ = m;
                // Discard queued work; the next pass rescans everything.
                self.digrams.clear();
                continue;
            }
            // Utility: inline or drop underused rules.
            let mut acted = false;
            let under: Vec<i32> = {
                let mut v: Vec<i32> = self
                    .uses
                    .iter()
                    .filter(|(_, u)| u.count < 2)
                    .map(|(&id, _)| id)
                    .collect();
                v.sort_unstable_by_key(|&id| std::cmp::Reverse(id));
                v
            };
            for id in under {
                if self.rules.contains_key(&id) {
                    let mut work = Vec::new();
                    self.apply_utility(id, &mut work);
                    self.digrams.clear();
                    acted = true;
                }
            }
            if !acted {
                self.rebuild_digram_index();
                return;
            }
        }
    }

    // ---- validation ----------------------------------------------------

    /// Verify every structural invariant by full scan; for tests.
    pub fn check_invariants(&self) -> Result<(), String> {
        let mut seen_digrams: HashMap<DigramKey, u32> = HashMap::new();
        let mut actual_uses: HashMap<i32, (u64, HashSet<u32>)> = HashMap::new();
        for (&id, &guard) in &self.rules {
            if self.node(guard).exp != 0 || self.node(guard).id != id {
                return Err(format!("rule {id}: bad guard"));
            }
            let mut cur = self.node(guard).next;
            let mut prev = guard;
            while cur != guard {
                let n = self.node(cur);
                if !n.alive {
                    return Err(format!("rule {id}: dead node in body"));
                }
                if n.prev != prev {
                    return Err(format!("rule {id}: broken back link"));
                }
                if n.exp == 0 {
                    return Err(format!("rule {id}: zero exponent"));
                }
                if !self.is_guard(prev) && self.node(prev).id == n.id {
                    return Err(format!("rule {id}: adjacent symbols share id {}", n.id));
                }
                if n.id < 0 {
                    if !self.rules.contains_key(&n.id) {
                        return Err(format!("rule {id}: dangling reference to {}", n.id));
                    }
                    let entry = actual_uses.entry(n.id).or_default();
                    entry.0 += n.exp as u64;
                    entry.1.insert(cur);
                }
                if let Some(key) = self.digram_at(cur) {
                    if let Some(&other) = seen_digrams.get(&key) {
                        return Err(format!(
                            "digram {key:?} occurs at both node {other} and node {cur}"
                        ));
                    }
                    seen_digrams.insert(key, cur);
                    match self.digrams.get(&key) {
                        Some(&listed) if listed == cur => {}
                        Some(&listed) => {
                            return Err(format!(
                                "digram {key:?} indexed at node {listed}, occurs at {cur}"
                            ))
                        }
                        None => return Err(format!("digram {key:?} missing from index")),
                    }
                }
                prev = cur;
                cur = n.next;
            }
        }
        for (key, node) in &self.digrams {
            if seen_digrams.get(key) != Some(node) {
                return Err(format!("stale digram index entry {key:?} -> {node}"));
            }
        }
        for (&id, _) in &self.rules {
            if id == START_RULE_ID {
                continue;
            }
            let (count, sites) = actual_uses.get(&id).cloned().unwrap_or_default();
            if count < 2 {
                return Err(format!("rule {id}: used {count} times"));
            }
            let tracked = self.uses.get(&id).ok_or(format!("rule {id}: untracked"))?;
            if tracked.count != count || tracked.sites != sites {
                return Err(format!(
                    "rule {id}: tracked usage {}/{:?} != actual {}/{:?}",
                    tracked.count, tracked.sites, count, sites
                ));
            }
        }
        for (id, _) in &actual_uses {
            if !self.rules.contains_key(id) {
                return Err(format!("reference to deleted rule {id}"));
            }
        }
        Ok(())
    }
}

/// Byte-level interchangeability of two grammars.
pub fn grammar_equal(a: &Grammar, b: &Grammar) -> bool {
    a.serialize() == b.serialize()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn build(stream: &[u32]) -> Grammar {
        let mut g = Grammar::new();
        g.append_all(stream.iter().copied());
        g
    }

    fn sym(id: i32, exp: u32) -> Symbol {
        Symbol { id, exp }
    }

    #[test]
    fn empty_grammar_expands_to_nothing() {
        let g = Grammar::new();
        assert_eq!(g.expand().unwrap(), Vec::<u32>::new());
        assert_eq!(g.rule_count(), 1);
        assert_eq!(g.total_symbols(), 0);
    }

    #[test]
    fn single_terminal() {
        let g = build(&[7]);
        assert_eq!(g.rules_view(), vec![(START_RULE_ID, vec![sym(7, 1)])]);
        assert_eq!(g.expand().unwrap(), vec![7]);
    }

    #[test]
    fn runs_collapse_into_exponents() {
        let g = build(&[0, 0, 0, 0, 0]);
        assert_eq!(g.rules_view(), vec![(START_RULE_ID, vec![sym(0, 5)])]);
    }

    #[test]
    fn repeated_pair_forms_a_rule_with_exponent() {
        // Worked by hand from the plain algorithm on "abab", then adjacent
        // equal symbols merged: S -> C^2, C -> a b.
        let g = build(&[0, 1, 0, 1]);
        assert_eq!(
            g.rules_view(),
            vec![
                (START_RULE_ID, vec![sym(-2, 2)]),
                (-2, vec![sym(0, 1), sym(1, 1)]),
            ]
        );
        assert_eq!(g.expand().unwrap(), vec![0, 1, 0, 1]);
        g.check_invariants().unwrap();
    }

    #[test]
    fn nested_write_loop_collapses_to_two_rules() {
        // (a a a a b) three times: S -> A^3, A -> a^4 b.
        let mut stream = Vec::new();
        for _ in 0..3 {
            stream.extend_from_slice(&[0, 0, 0, 0, 1]);
        }
        let g = build(&stream);
        assert_eq!(
            g.rules_view(),
            vec![
                (START_RULE_ID, vec![sym(-2, 3)]),
                (-2, vec![sym(0, 4), sym(1, 1)]),
            ]
        );
        assert_eq!(g.rule_count(), 2);
        assert_eq!(g.total_symbols(), 3);
        assert_eq!(g.expanded_len().unwrap(), 15);
        g.check_invariants().unwrap();
    }

    #[test]
    fn nested_loop_shape_is_size_invariant() {
        let shape = |m: usize, n: usize| {
            let mut stream = Vec::new();
            for _ in 0..m {
                stream.extend(std::iter::repeat(0).take(n));
                stream.push(1);
            }
            let g = build(&stream);
            (g.rule_count(), g.total_symbols())
        };
        let baseline = shape(2, 2);
        for &(m, n) in &[(2, 50), (50, 2), (17, 3), (50, 50)] {
            assert_eq!(shape(m, n), baseline);
        }
    }

    #[test]
    fn underused_rule_is_inlined() {
        // x y z x y z: the pair rule for (x,y) is absorbed into the rule
        // for the full period once (C,z) repeats.
        let g = build(&[0, 1, 2, 0, 1, 2]);
        assert_eq!(
            g.rules_view(),
            vec![
                (START_RULE_ID, vec![sym(-3, 2)]),
                (-3, vec![sym(0, 1), sym(1, 1), sym(2, 1)]),
            ]
        );
        g.check_invariants().unwrap();
    }

    #[test]
    fn digrams_with_different_exponents_stay_distinct() {
        // a^2 b and a^3 b are different digrams; no rule must form.
        let g = build(&[0, 0, 1, 0, 0, 0, 1]);
        assert_eq!(
            g.rules_view(),
            vec![(
                START_RULE_ID,
                vec![sym(0, 2), sym(1, 1), sym(0, 3), sym(1, 1)]
            )]
        );
        g.check_invariants().unwrap();
    }

    #[test]
    fn tail_exponent_growth_can_complete_a_rule_body() {
        // After a^2 b a^1, appending a grows the tail to a^2 and the digram
        // (b, a^2)... then b completes (a^2, b) which matches the body rule.
        let g = build(&[0, 0, 1, 0, 0, 1]);
        assert_eq!(
            g.rules_view(),
            vec![
                (START_RULE_ID, vec![sym(-2, 2)]),
                (-2, vec![sym(0, 2), sym(1, 1)]),
            ]
        );
        g.check_invariants().unwrap();
    }

    #[test]
    fn expansion_reproduces_every_stream() {
        let streams: Vec<Vec<u32>> = vec![
            vec![],
            vec![3],
            vec![0, 1, 2, 3, 4, 5],
            vec![0; 100],
            vec![0, 1, 0, 1, 0, 1, 0, 1, 0, 1],
            vec![0, 1, 2, 0, 1, 2, 0, 1, 2],
            vec![5, 5, 2, 5, 5, 2, 7, 5, 5, 2, 5, 5, 2, 7],
        ];
        for stream in streams {
            let g = build(&stream);
            assert_eq!(g.expand().unwrap(), stream);
            g.check_invariants().unwrap();
        }
    }

    #[test]
    fn invariants_hold_after_every_append() {
        // Pseudo-random stream over a small alphabet, checked step by step.
        let mut g = Grammar::new();
        let mut x: u64 = 0x243f6a8885a308d3;
        let mut stream = Vec::new();
        for _ in 0..400 {
            x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let t = ((x >> 33) % 4) as u32;
            stream.push(t);
            g.append(t);
            g.check_invariants()
                .unwrap_or_else(|e| panic!("after {} appends: {e}", stream.len()));
        }
        assert_eq!(g.expand().unwrap(), stream);
    }

    #[test]
    fn serialization_roundtrip_and_equality() {
        let g = build(&[0, 1, 0, 1, 2, 0, 1, 0, 1, 2]);
        let bytes = g.serialize();
        assert_eq!(bytes, build(&[0, 1, 0, 1, 2, 0, 1, 0, 1, 2]).serialize());
        let back = Grammar::deserialize(&bytes).unwrap();
        assert_eq!(back.serialize(), bytes);
        assert_eq!(back.expand().unwrap(), g.expand().unwrap());
        assert!(grammar_equal(&g, &back));
        assert!(!grammar_equal(&g, &build(&[0, 1])));
    }

    #[test]
    fn deserialize_rejects_damage() {
        assert!(Grammar::deserialize(&[]).is_err());
        let mut huge = Vec::new();
        huge.extend_from_slice(&u32::MAX.to_le_bytes());
        assert!(Grammar::deserialize(&huge).is_err());
        let g = build(&[0, 1, 0, 1]);
        let mut bytes = g.serialize();
        bytes.push(0);
        assert!(matches!(
            Grammar::deserialize(&bytes),
            Err(GrammarError::Malformed {
                reason: "trailing bytes",
                ..
            })
        ));
    }

    #[test]
    fn expansion_limit_guards_blowup() {
        let mut g = Grammar::new();
        for _ in 0..1000 {
            g.append(0);
        }
        assert_eq!(
            g.expand_with_limit(999),
            Err(GrammarError::ExpansionLimit { limit: 999 })
        );
        assert_eq!(g.expand_with_limit(1000).unwrap().len(), 1000);
    }

    #[test]
    fn cyclic_rules_are_detected() {
        let g = Grammar::from_rules(vec![
            (START_RULE_ID, vec![sym(-2, 1)]),
            (-2, vec![sym(0, 1), sym(-3, 1)]),
            (-3, vec![sym(-2, 1), sym(1, 1)]),
        ])
        .unwrap();
        assert!(matches!(g.expand(), Err(GrammarError::CyclicRules { .. })));
        assert!(matches!(
            g.expanded_len(),
            Err(GrammarError::CyclicRules { .. })
        ));
    }

    #[test]
    fn dangling_references_are_detected() {
        assert!(matches!(
            Grammar::from_rules(vec![(START_RULE_ID, vec![sym(-5, 2)])]),
            Err(GrammarError::UndefinedRule { rule: -5 })
        ));
    }

    #[test]
    fn remap_applies_pointwise() {
        let g = build(&[0, 1, 0, 1]);
        let r = g.remap_terminals(&[10, 11]).unwrap();
        assert_eq!(r.expand().unwrap(), vec![10, 11, 10, 11]);
        r.check_invariants().unwrap();
        assert!(matches!(
            g.remap_terminals(&[10]),
            Err(GrammarError::IncompleteMapping { terminal: 1 })
        ));
    }

    #[test]
    fn remap_identity_preserves_bytes() {
        let g = build(&[0, 1, 2, 0, 1, 2, 3, 3]);
        let r = g.remap_terminals(&[0, 1, 2, 3]).unwrap();
        assert_eq!(r.serialize(), g.serialize());
    }

    #[test]
    fn fusing_remap_recoalesces() {
        // S -> C^2, C -> a b; mapping both terminals to x fuses C's body
        // into x^2 and the expansion becomes x x x x.
        let g = build(&[0, 1, 0, 1]);
        let r = g.remap_terminals(&[9, 9]).unwrap();
        assert_eq!(r.expand().unwrap(), vec![9, 9, 9, 9]);
        r.check_invariants().unwrap();
    }

    #[test]
    fn fusing_remap_rededuplicates_digrams() {
        // b->d makes (a,b) collide with an existing (a,d) digram.
        let g = build(&[0, 1, 2, 0, 1, 3, 0, 1, 2, 0, 1, 3]);
        let before = g.expand().unwrap();
        let map = [0u32, 1, 3, 3];
        let want: Vec<u32> = before.iter().map(|&t| map[t as usize]).collect();
        let r = g.remap_terminals(&map).unwrap();
        assert_eq!(r.expand().unwrap(), want);
        r.check_invariants().unwrap();
    }

    #[test]
    fn identical_streams_give_identical_grammars() {
        let stream: Vec<u32> = (0..200).map(|i| (i * i + i / 7) as u32 % 5).collect();
        assert!(grammar_equal(&build(&stream), &build(&stream)));
    }
}
