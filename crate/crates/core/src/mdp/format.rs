//! Plain-text MDP serialization.
//!
//! ```text
//! n_states 3
//! n_actions 2
//! gamma 1
//! reward_kind next_state_only
//! terminal 1 2
//! initial 1 0 0
//! transition 0 0 0 1 0
//! reward 0 0 0 0 0
//! ...
//! ```
//!
//! One `transition` and one `reward` line per `(s, a)` in row-major order,
//! each holding the dense row over next states. Blank lines and `#` comments
//! are ignored. Floats are written with Rust's shortest round-trip formatting.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};

use super::{PolicyTable, RewardKind, TabularMdp};

fn join(values: impl IntoIterator<Item = f64>) -> String {
    values.into_iter().map(|v| format!("{v}")).collect::<Vec<_>>().join(" ")
}

pub fn write_mdp<W: Write>(mdp: &TabularMdp, mut out: W) -> Result<()> {
    writeln!(out, "n_states {}", mdp.n_states())?;
    writeln!(out, "n_actions {}", mdp.n_actions())?;
    writeln!(out, "gamma {}", mdp.gamma())?;
    writeln!(out, "reward_kind {}", mdp.reward_kind().as_str())?;
    let terminals: Vec<String> = (0..mdp.n_states())
        .filter(|&s| mdp.is_terminal(s))
        .map(|s| s.to_string())
        .collect();
    if terminals.is_empty() {
        writeln!(out, "terminal")?;
    } else {
        writeln!(out, "terminal {}", terminals.join(" "))?;
    }
    writeln!(out, "initial {}", join(mdp.initial_dist().iter().copied()))?;
    for s in 0..mdp.n_states() {
        for a in 0..mdp.n_actions() {
            writeln!(
                out,
                "transition {s} {a} {}",
                join(mdp.transition_row(s, a).iter().copied())
            )?;
        }
    }
    for s in 0..mdp.n_states() {
        for a in 0..mdp.n_actions() {
            writeln!(out, "reward {s} {a} {}", join(mdp.reward_row(s, a).iter().copied()))?;
        }
    }
    Ok(())
}

struct Header {
    n_states: Option<usize>,
    n_actions: Option<usize>,
    gamma: Option<f64>,
    kind: Option<RewardKind>,
    terminal: Option<Vec<usize>>,
    initial: Option<Vec<f64>>,
}

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

fn parse_num<T: std::str::FromStr>(tok: &str, line: usize) -> Result<T> {
    tok.parse()
        .map_err(|_| parse_err(line, format!("cannot parse '{tok}'")))
}

pub fn read_mdp<R: BufRead>(input: R) -> Result<TabularMdp> {
    let mut h = Header {
        n_states: None,
        n_actions: None,
        gamma: None,
        kind: None,
        terminal: None,
        initial: None,
    };
    let mut transition: Option<Vec<f64>> = None;
    let mut reward: Option<Vec<f64>> = None;
    let mut seen_t = Vec::new();
    let mut seen_r = Vec::new();

    for (i, raw) in input.lines().enumerate() {
        let lineno = i + 1;
        let raw = raw?;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut toks = content.split_whitespace();
        let key = toks.next().unwrap_or_default();
        let rest: Vec<&str> = toks.collect();
        let single = |rest: &[&str]| -> Result<String> {
            match rest {
                [v] => Ok(v.to_string()),
                _ => Err(parse_err(lineno, format!("'{key}' takes exactly one value"))),
            }
        };
        match key {
            "n_states" => h.n_states = Some(parse_num(&single(&rest)?, lineno)?),
            "n_actions" => h.n_actions = Some(parse_num(&single(&rest)?, lineno)?),
            "gamma" => h.gamma = Some(parse_num(&single(&rest)?, lineno)?),
            "reward_kind" => {
                let v = single(&rest)?;
                h.kind =
                    Some(RewardKind::parse(&v).ok_or_else(|| parse_err(lineno, format!("unknown reward_kind '{v}'")))?);
            }
            "terminal" => {
                h.terminal = Some(rest.iter().map(|t| parse_num(t, lineno)).collect::<Result<_>>()?);
            }
            "initial" => {
                h.initial = Some(rest.iter().map(|t| parse_num(t, lineno)).collect::<Result<_>>()?);
            }
            "transition" | "reward" => {
                let (ns, na) = match (h.n_states, h.n_actions) {
                    (Some(ns), Some(na)) => (ns, na),
                    _ => return Err(parse_err(lineno, "n_states and n_actions must precede table rows")),
                };
                if rest.len() != ns + 2 {
                    return Err(parse_err(
                        lineno,
                        format!("expected s, a and {ns} values, got {} tokens", rest.len()),
                    ));
                }
                let s: usize = parse_num(rest[0], lineno)?;
                let a: usize = parse_num(rest[1], lineno)?;
                if s >= ns || a >= na {
                    return Err(parse_err(lineno, format!("row ({s}, {a}) out of range")));
                }
                let (table, seen) = if key == "transition" {
                    (&mut transition, &mut seen_t)
                } else {
                    (&mut reward, &mut seen_r)
                };
                let table = table.get_or_insert_with(|| vec![0.0; ns * na * ns]);
                if seen.is_empty() {
                    seen.resize(ns * na, false);
                }
                if std::mem::replace(&mut seen[s * na + a], true) {
                    return Err(parse_err(lineno, format!("duplicate {key} row ({s}, {a})")));
                }
                for (j, tok) in rest[2..].iter().enumerate() {
                    table[(s * na + a) * ns + j] = parse_num(tok, lineno)?;
                }
            }
            other => return Err(parse_err(lineno, format!("unknown key '{other}'"))),
        }
    }

    let missing = |what: &str| parse_err(0, format!("missing '{what}'"));
    let ns = h.n_states.ok_or_else(|| missing("n_states"))?;
    let na = h.n_actions.ok_or_else(|| missing("n_actions"))?;
    if seen_t.iter().filter(|&&b| b).count() != ns * na {
        return Err(missing("transition rows"));
    }
    if seen_r.iter().filter(|&&b| b).count() != ns * na {
        return Err(missing("reward rows"));
    }
    let mut b = TabularMdp::builder(ns, na)
        .gamma(h.gamma.ok_or_else(|| missing("gamma"))?)
        .reward_kind(h.kind.ok_or_else(|| missing("reward_kind"))?)
        .initial_dist(h.initial.ok_or_else(|| missing("initial"))?);
    for s in h.terminal.unwrap_or_default() {
        if s >= ns {
            return Err(parse_err(0, format!("terminal state {s} out of range")));
        }
        b.set_terminal(s);
    }
    let (t, r) = (transition.unwrap_or_default(), reward.unwrap_or_default());
    for s in 0..ns {
        for a in 0..na {
            for y in 0..ns {
                let i = (s * na + a) * ns + y;
                b.set_transition(s, a, y, t[i]);
                b.set_reward(s, a, y, r[i]);
            }
        }
    }
    b.build()
}

/// `n_states`, `n_actions`, then one `logits s ...` line per state.
pub fn write_policy<W: Write>(policy: &PolicyTable, mut out: W) -> Result<()> {
    writeln!(out, "n_states {}", policy.n_states())?;
    writeln!(out, "n_actions {}", policy.n_actions())?;
    for s in 0..policy.n_states() {
        writeln!(out, "logits {s} {}", join(policy.row(s).iter().copied()))?;
    }
    Ok(())
}

/// Reads [`write_policy`] output; states without a `logits` line are uniform.
pub fn read_policy<R: BufRead>(input: R) -> Result<PolicyTable> {
    let mut ns: Option<usize> = None;
    let mut na: Option<usize> = None;
    let mut logits: Option<Vec<f64>> = None;
    for (i, raw) in input.lines().enumerate() {
        let line = i + 1;
        let raw = raw?;
        let content = raw.split('#').next().unwrap_or("").trim();
        let mut toks = content.split_whitespace();
        let Some(key) = toks.next() else { continue };
        match key {
            "n_states" => ns = Some(parse_num(toks.next().unwrap_or(""), line)?),
            "n_actions" => na = Some(parse_num(toks.next().unwrap_or(""), line)?),
            "logits" => {
                let (Some(ns), Some(na)) = (ns, na) else {
                    return Err(parse_err(line, "logits before header"));
                };
                let table = logits.get_or_insert_with(|| vec![0.0; ns * na]);
                let s: usize = parse_num(toks.next().unwrap_or(""), line)?;
                if s >= ns {
                    return Err(parse_err(line, format!("state {s} out of range")));
                }
                let row: Vec<f64> = toks.map(|t| parse_num(t, line)).collect::<Result<_>>()?;
                if row.len() != na {
                    return Err(parse_err(line, format!("expected {na} logits, got {}", row.len())));
                }
                table[s * na..(s + 1) * na].copy_from_slice(&row);
            }
            other => return Err(parse_err(line, format!("unknown key `{other}`"))),
        }
    }
    let (Some(ns), Some(na)) = (ns, na) else {
        return Err(parse_err(0, "missing n_states or n_actions"));
    };
    PolicyTable::from_logits(ns, na, logits.unwrap_or_else(|| vec![0.0; ns * na]))
}
