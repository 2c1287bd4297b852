//! JSON documents read and written by the CLI.
//!
//! Game: `{"n": 3, "values": {"1": 0, "0b011": 40, ...}}` with coalition masks
//! as decimal or `0b` binary keys; bit `i` is player `i`. The empty coalition
//! may be omitted, every other mask is required.
//!
//! Problem: `{"estate": 200, "claims": {"a": 100, "b": 200}, "rule": "talmud"}`.
//! `claims` may also be a plain array (ids become `1..n`); `rule` is optional.

use serde_json::{Map, Value};
use vfl_incentive_core::coalitional::MAX_PLAYERS;
use vfl_incentive_core::{CoalitionalGame, RoundTrace, Rule};

use crate::error::{Error, Result};

fn format_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

fn parse_mask(key: &str) -> Option<usize> {
    match key.strip_prefix("0b") {
        Some(bits) => usize::from_str_radix(bits, 2).ok(),
        None => key.parse().ok(),
    }
}

pub fn parse_game(text: &str) -> Result<CoalitionalGame> {
    let doc: Value = serde_json::from_str(text)?;
    let n = doc
        .get("n")
        .and_then(Value::as_u64)
        .ok_or_else(|| format_err("game needs an integer `n`"))? as usize;
    // Reject oversized games before allocating the table.
    if n > MAX_PLAYERS {
        return Err(vfl_incentive_core::Error::GameTooLarge(n).into());
    }
    if n == 0 {
        return Err(vfl_incentive_core::Error::NoCreditors.into());
    }
    let entries = doc
        .get("values")
        .and_then(Value::as_object)
        .ok_or_else(|| format_err("game needs a `values` object"))?;

    let size = 1usize << n;
    let mut values: Vec<Option<f64>> = vec![None; size];
    values[0] = Some(0.0);
    for (key, v) in entries {
        let mask =
            parse_mask(key).ok_or_else(|| format_err(format!("bad coalition key `{key}`")))?;
        if mask >= size {
            return Err(format_err(format!(
                "coalition `{key}` is outside {n} players"
            )));
        }
        let v = v
            .as_f64()
            .ok_or_else(|| format_err(format!("value of coalition `{key}` is not a number")))?;
        values[mask] = Some(v);
    }
    let values = values
        .into_iter()
        .enumerate()
        .map(|(mask, v)| {
            v.ok_or_else(|| {
                format_err(format!(
                    "missing value for coalition {mask:#0w$b}",
                    w = n + 2
                ))
            })
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(CoalitionalGame::new(n, values)?)
}

pub fn game_to_json(game: &CoalitionalGame) -> Value {
    let values: Map<String, Value> = game
        .values()
        .iter()
        .enumerate()
        .map(|(mask, &v)| (mask.to_string(), Value::from(v)))
        .collect();
    serde_json::json!({ "n": game.players(), "values": values })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProblemDoc {
    pub estate: f64,
    pub creditors: Vec<String>,
    pub claims: Vec<f64>,
    pub rule: Option<Rule>,
}

/// Claims as an id→claim object (order kept) or an array (ids `1..n`).
pub fn parse_claims_value(claims: &Value) -> Result<(Vec<String>, Vec<f64>)> {
    let number = |id: &str, v: &Value| {
        v.as_f64()
            .ok_or_else(|| format_err(format!("claim `{id}` is not a number")))
    };
    match claims {
        Value::Object(map) => map
            .iter()
            .map(|(id, v)| Ok((id.clone(), number(id, v)?)))
            .collect::<Result<Vec<_>>>()
            .map(|pairs| pairs.into_iter().unzip()),
        Value::Array(items) => {
            let claims = items
                .iter()
                .enumerate()
                .map(|(i, v)| number(&(i + 1).to_string(), v))
                .collect::<Result<Vec<_>>>()?;
            Ok(((1..=claims.len()).map(|i| i.to_string()).collect(), claims))
        }
        _ => Err(format_err("`claims` must be an object or an array")),
    }
}

pub fn parse_problem(text: &str) -> Result<ProblemDoc> {
    let doc: Value = serde_json::from_str(text)?;
    let estate = doc
        .get("estate")
        .and_then(Value::as_f64)
        .ok_or_else(|| format_err("problem needs a numeric `estate`"))?;
    let (creditors, claims) = parse_claims_value(
        doc.get("claims")
            .ok_or_else(|| format_err("problem needs `claims`"))?,
    )?;
    let rule = match doc.get("rule") {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) => Some(
            s.parse::<Rule>()
                .map_err(|_| format_err(format!("unknown rule `{s}`")))?,
        ),
        Some(_) => return Err(format_err("`rule` must be a string")),
    };
    Ok(ProblemDoc {
        estate,
        creditors,
        claims,
        rule,
    })
}

/// One JSON object per round, then one per message.
///
/// ```text
/// {"type":"round","round":0,"loss":0.69}
/// {"type":"message","round":0,"batch":0,"sender":"P_h1","receiver":"P_a","kind":"partial_score"}
/// ```
pub fn trace_to_jsonl(trace: &RoundTrace) -> Result<String> {
    let mut out = String::new();
    let name = |i: u16| {
        trace
            .parties
            .get(usize::from(i))
            .cloned()
            .unwrap_or_default()
    };
    for (round, loss) in trace.round_losses.iter().enumerate() {
        let line = serde_json::json!({ "type": "round", "round": round, "loss": loss });
        out.push_str(&serde_json::to_string(&line)?);
        out.push('\n');
    }
    for m in &trace.messages {
        let line = serde_json::json!({
            "type": "message",
            "round": m.round,
            "batch": m.batch,
            "sender": name(m.sender),
            "receiver": name(m.receiver),
            "kind": m.kind,
        });
        out.push_str(&serde_json::to_string(&line)?);
        out.push('\n');
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use vfl_incentive_core::vflsim::{Message, PayloadKind};

    #[test]
    fn game_keys_decimal_and_binary() {
        let g = parse_game(r#"{"n": 2, "values": {"1": 1, "0b10": 2, "3": 4}}"#).unwrap();
        assert_eq!(g.values(), &[0.0, 1.0, 2.0, 4.0]);
        let back = parse_game(&game_to_json(&g).to_string()).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn missing_mask_is_named() {
        let err = parse_game(r#"{"n": 2, "values": {"1": 1, "3": 4}}"#).unwrap_err();
        assert!(err.to_string().contains("0b10"), "{err}");
        assert!(parse_game(r#"{"n": 2, "values": {"4": 1}}"#).is_err());
        assert!(parse_game(r#"{"n": 1, "values": {"0": 1, "1": 1}}"#).is_err());
    }

    #[test]
    fn oversized_game_rejected_early() {
        let err = parse_game(r#"{"n": 25, "values": {}}"#).unwrap_err();
        assert_eq!(err.exit_code(), 1);
        assert!(err.to_string().contains("exact Shapley table too large"));
    }

    #[test]
    fn problem_object_keeps_order() {
        let p = parse_problem(
            r#"{"estate": 200, "claims": {"z": 100, "a": 200, "m": 300}, "rule": "cea"}"#,
        )
        .unwrap();
        assert_eq!(p.creditors, ["z", "a", "m"]);
        assert_eq!(p.claims, [100.0, 200.0, 300.0]);
        assert_eq!(p.rule, Some(Rule::Cea));
        let arr = parse_problem(r#"{"estate": 1, "claims": [1, 2]}"#).unwrap();
        assert_eq!(arr.creditors, ["1", "2"]);
        assert_eq!(arr.rule, None);
        assert!(parse_problem(r#"{"estate": 1, "claims": ["x"]}"#).is_err());
    }

    #[test]
    fn trace_lines() {
        let trace = RoundTrace {
            parties: vec!["A".into(), "B".into()],
            round_losses: vec![0.5],
            messages: vec![Message {
                round: 0,
                batch: 0,
                sender: 1,
                receiver: 0,
                kind: PayloadKind::PartialScore,
            }],
        };
        let text = trace_to_jsonl(&trace).unwrap();
        let lines: Vec<Value> = text
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[1]["sender"], "B");
        assert_eq!(lines[1]["kind"], "partial_score");
    }
}
