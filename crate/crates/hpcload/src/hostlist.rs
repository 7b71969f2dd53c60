//! Compressed-hostlist grammar.
//!
//! The scheduler reports node sets in a compact bracket notation such as
//! `node[01-03,07],gpu-a`. This module expands that notation into concrete
//! hostnames and counts the denoted hosts without materializing them.
//!
//! Grammar: comma-separated terms; each term is a literal hostname or a
//! hostname with exactly one bracket group containing numeric singletons
//! and `lo-hi` ranges. Nested or repeated bracket groups are rejected.
//! Zero-padding of generated names copies the width of the `lo` token.

use thiserror::Error;

/// Parse failure, positioned at the byte offset of the offending construct.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("malformed hostlist at byte {position}: {reason}")]
pub struct MalformedHostlist {
    pub position: usize,
    pub reason: String,
}

impl MalformedHostlist {
    fn new(position: usize, reason: impl Into<String>) -> Self {
        Self {
            position,
            reason: reason.into(),
        }
    }
}

/// One numeric entry inside a bracket group.
#[derive(Debug, Clone, PartialEq, Eq)]
enum RangePart {
    /// A single number, kept verbatim so padding survives.
    Single(String),
    /// An inclusive `lo-hi` range; padding width is taken from `lo`.
    Range { lo: String, hi: String },
}

impl RangePart {
    fn count(&self) -> Result<u64, ()> {
        match self {
            RangePart::Single(_) => Ok(1),
            RangePart::Range { lo, hi } => {
                let lo: u64 = lo.parse().map_err(|_| ())?;
                let hi: u64 = hi.parse().map_err(|_| ())?;
                hi.checked_sub(lo).and_then(|d| d.checked_add(1)).ok_or(())
            }
        }
    }
}

/// One comma-separated term of the hostlist.
#[derive(Debug, Clone, PartialEq, Eq)]
enum Term {
    Literal(String),
    Bracketed {
        prefix: String,
        parts: Vec<RangePart>,
        suffix: String,
    },
}

fn is_name_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.'
}

/// Splits the input into terms and validates the bracket grammar.
fn parse(input: &str) -> Result<Vec<Term>, MalformedHostlist> {
    if input.is_empty() {
        return Err(MalformedHostlist::new(0, "empty hostlist"));
    }

    let bytes = input.as_bytes();
    let mut terms = Vec::new();
    let mut pos = 0;

    loop {
        let term_start = pos;
        let mut prefix = String::new();
        let mut bracket: Option<(Vec<RangePart>, usize)> = None;
        let mut suffix = String::new();

        // Scan one term up to a top-level comma or end of input.
        while pos < bytes.len() && bytes[pos] != b',' {
            let c = bytes[pos] as char;
            match c {
                '[' => {
                    if bracket.is_some() {
                        return Err(MalformedHostlist::new(
                            pos,
                            "second bracket group in one term",
                        ));
                    }
                    if !suffix.is_empty() {
                        return Err(MalformedHostlist::new(
                            pos,
                            "second bracket group in one term",
                        ));
                    }
                    let (parts, end) = parse_bracket(input, pos)?;
                    bracket = Some((parts, pos));
                    pos = end; // positioned past the closing ']'
                }
                ']' => {
                    return Err(MalformedHostlist::new(pos, "unbalanced ']'"));
                }
                _ if is_name_char(c) => {
                    if bracket.is_some() {
                        suffix.push(c);
                    } else {
                        prefix.push(c);
                    }
                    pos += 1;
                }
                _ => {
                    return Err(MalformedHostlist::new(
                        pos,
                        format!("illegal character {c:?}"),
                    ));
                }
            }
        }

        match bracket {
            None => {
                if prefix.is_empty() {
                    return Err(MalformedHostlist::new(term_start, "empty term"));
                }
                terms.push(Term::Literal(prefix));
            }
            Some((parts, _)) => terms.push(Term::Bracketed {
                prefix,
                parts,
                suffix,
            }),
        }

        if pos >= bytes.len() {
            break;
        }
        pos += 1; // consume the comma
        if pos >= bytes.len() {
            return Err(MalformedHostlist::new(pos, "empty term"));
        }
    }

    Ok(terms)
}

/// Parses one `[...]` group starting at `open`; returns the parts and the
/// byte offset just past the closing bracket.
fn parse_bracket(input: &str, open: usize) -> Result<(Vec<RangePart>, usize), MalformedHostlist> {
    let bytes = input.as_bytes();
    let close = input[open + 1..]
        .find([']', '['])
        .map(|i| open + 1 + i)
        .ok_or_else(|| MalformedHostlist::new(open, "unbalanced '['"))?;
    if bytes[close] == b'[' {
        return Err(MalformedHostlist::new(close, "nested '['"));
    }

    let body = &input[open + 1..close];
    if body.is_empty() {
        return Err(MalformedHostlist::new(open + 1, "empty bracket group"));
    }

    let mut parts = Vec::new();
    let mut offset = open + 1;
    for piece in body.split(',') {
        parts.push(parse_range_part(piece, offset)?);
        offset += piece.len() + 1;
    }
    Ok((parts, close + 1))
}

fn parse_range_part(piece: &str, at: usize) -> Result<RangePart, MalformedHostlist> {
    let check_number = |tok: &str, at: usize| -> Result<(), MalformedHostlist> {
        if tok.is_empty() {
            return Err(MalformedHostlist::new(at, "empty range bound"));
        }
        if let Some(bad) = tok.chars().position(|c| !c.is_ascii_digit()) {
            return Err(MalformedHostlist::new(
                at + bad,
                format!("illegal character {:?} in range", &tok[bad..bad + 1]),
            ));
        }
        if tok.parse::<u64>().is_err() {
            return Err(MalformedHostlist::new(at, "number too large"));
        }
        Ok(())
    };

    match piece.split_once('-') {
        None => {
            check_number(piece, at)?;
            Ok(RangePart::Single(piece.to_string()))
        }
        Some((lo, hi)) => {
            check_number(lo, at)?;
            check_number(hi, at + lo.len() + 1)?;
            let lo_n: u64 = lo.parse().expect("validated");
            let hi_n: u64 = hi.parse().expect("validated");
            if lo_n > hi_n {
                return Err(MalformedHostlist::new(at, "reversed range"));
            }
            Ok(RangePart::Range {
                lo: lo.to_string(),
                hi: hi.to_string(),
            })
        }
    }
}

/// Expands a compressed hostlist into concrete hostnames.
///
/// Left-to-right term order is preserved, ranges enumerate ascending, and
/// the zero-padding width of each range's `lo` token is kept. Duplicates
/// are preserved as written.
pub fn expand_hostlist(nodelist: &str) -> Result<Vec<String>, MalformedHostlist> {
    let mut hosts = Vec::new();
    for term in parse(nodelist)? {
        match term {
            Term::Literal(name) => hosts.push(name),
            Term::Bracketed {
                prefix,
                parts,
                suffix,
            } => {
                for part in &parts {
                    match part {
                        RangePart::Single(tok) => hosts.push(format!("{prefix}{tok}{suffix}")),
                        RangePart::Range { lo, hi } => {
                            let width = lo.len();
                            let lo: u64 = lo.parse().expect("validated");
                            let hi: u64 = hi.parse().expect("validated");
                            for n in lo..=hi {
                                hosts.push(format!("{prefix}{n:0width$}{suffix}"));
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(hosts)
}

/// Number of hostnames a compressed hostlist denotes, computed without
/// materializing the expansion.
pub fn hostlist_cardinality(nodelist: &str) -> Result<u64, MalformedHostlist> {
    let mut total: u64 = 0;
    for term in parse(nodelist)? {
        let n = match &term {
            Term::Literal(_) => 1,
            Term::Bracketed { parts, .. } => {
                let mut n: u64 = 0;
                for part in parts {
                    let c = part
                        .count()
                        .map_err(|_| MalformedHostlist::new(0, "range too large"))?;
                    n = n
                        .checked_add(c)
                        .ok_or_else(|| MalformedHostlist::new(0, "range too large"))?;
                }
                n
            }
        };
        total = total
            .checked_add(n)
            .ok_or_else(|| MalformedHostlist::new(0, "range too large"))?;
    }
    Ok(total)
}
