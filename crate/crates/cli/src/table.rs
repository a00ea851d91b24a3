//! Markdown rule tables.
//!
//! ```text
//! Average O3 = 12
//! Intercept = -7.8
//!
//! | Frequency | Rule | Weight |
//! |---:|---|---:|
//! | 0.29 | if temp < 65 then 6.1 else 19 | 0.12 |
//! | 0.17 | if ibt < 227 & temp ≥ 65 then 17 else 4.2 | 0.3 |
//! ```
//!
//! Frequencies, weights and rule outputs keep two significant digits. Cut
//! values are written in full so that a table identifies its rules exactly.

use sirus::{Side, SirusModel};

use crate::error::CliError;

const GEQ: &str = "≥";

/// `x` rounded to two significant digits.
pub fn two_digits(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let sci = format!("{x:.1e}");
    let (_, exponent) = sci.split_once('e').expect("scientific format");
    let exponent: i32 = exponent.parse().expect("integer exponent");
    if !(-4..6).contains(&exponent) {
        return sci;
    }
    let value: f64 = sci.parse().expect("round trip");
    let decimals = (1 - exponent).max(0) as usize;
    format!("{value:.decimals$}")
}

fn condition(name: &str, side: Side, cut: f64) -> String {
    match side {
        Side::Left => format!("{name} < {cut}"),
        Side::Right => format!("{name} {GEQ} {cut}"),
    }
}

/// Rule table of `model`, rules by decreasing frequency.
pub fn render_table(model: &SirusModel) -> String {
    let mut out = String::new();
    out.push_str(&format!("Average {} = {}\n", model.response_name, two_digits(model.response_mean)));
    out.push_str(&format!("Intercept = {}\n", two_digits(model.intercept)));
    out.push_str("\n| Frequency | Rule | Weight |\n|---:|---|---:|\n");
    let mut rules: Vec<_> = model.rules.iter().collect();
    rules.sort_by(|a, b| b.frequency.total_cmp(&a.frequency));
    for r in rules {
        let conditions: Vec<String> = r
            .rule
            .path
            .constraints()
            .iter()
            .zip(&r.rule.cut_values)
            .map(|(c, &cut)| condition(&model.feature_names[c.feature], c.side, cut))
            .collect();
        out.push_str(&format!(
            "| {} | if {} then {} else {} | {} |\n",
            two_digits(r.frequency),
            conditions.join(" & "),
            two_digits(r.rule.y_in),
            two_digits(r.rule.y_out),
            two_digits(r.weight)
        ));
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedCondition {
    pub feature: String,
    pub side: Side,
    pub cut: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedRule {
    pub frequency: f64,
    pub conditions: Vec<ParsedCondition>,
    pub y_in: f64,
    pub y_out: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedTable {
    pub response: String,
    pub average: f64,
    pub intercept: f64,
    pub rules: Vec<ParsedRule>,
}

fn bad(line: &str) -> CliError {
    CliError::Data(format!("malformed rule table line: `{line}`"))
}

fn number(s: &str, line: &str) -> Result<f64, CliError> {
    s.trim().parse().map_err(|_| bad(line))
}

fn parse_condition(text: &str, line: &str) -> Result<ParsedCondition, CliError> {
    let geq = format!(" {GEQ} ");
    let (name, side, cut) = match (text.rfind(" < "), text.rfind(&geq)) {
        (Some(i), j) if j.is_none_or(|j| i > j) => (&text[..i], Side::Left, &text[i + 3..]),
        (_, Some(j)) => (&text[..j], Side::Right, &text[j + geq.len()..]),
        _ => return Err(bad(line)),
    };
    Ok(ParsedCondition {
        feature: name.trim().to_string(),
        side,
        cut: number(cut, line)?,
    })
}

/// Reads a table written by [`render_table`].
pub fn parse_table(text: &str) -> Result<ParsedTable, CliError> {
    let mut lines = text.lines();
    let first = lines.next().ok_or_else(|| bad(""))?;
    let (response, average) = first
        .strip_prefix("Average ")
        .and_then(|rest| rest.rsplit_once(" = "))
        .ok_or_else(|| bad(first))?;
    let second = lines.next().ok_or_else(|| bad(""))?;
    let intercept = second.strip_prefix("Intercept = ").ok_or_else(|| bad(second))?;
    let mut rules = Vec::new();
    for line in lines {
        let line = line.trim();
        if !line.starts_with('|') || line.starts_with("| Frequency") || line.starts_with("|---") {
            continue;
        }
        let cells: Vec<&str> = line.trim_matches('|').split(" | ").map(str::trim).collect();
        let [frequency, rule, weight] = cells[..] else {
            return Err(bad(line));
        };
        let body = rule.strip_prefix("if ").ok_or_else(|| bad(line))?;
        let (conds, outputs) = body.rsplit_once(" then ").ok_or_else(|| bad(line))?;
        let (y_in, y_out) = outputs.split_once(" else ").ok_or_else(|| bad(line))?;
        rules.push(ParsedRule {
            frequency: number(frequency, line)?,
            conditions: conds
                .split(" & ")
                .map(|c| parse_condition(c, line))
                .collect::<Result<_, _>>()?,
            y_in: number(y_in, line)?,
            y_out: number(y_out, line)?,
            weight: number(weight, line)?,
        });
    }
    Ok(ParsedTable {
        response: response.to_string(),
        average: number(average, first)?,
        intercept: number(intercept, second)?,
        rules,
    })
}

impl ParsedRule {
    /// Whether this row describes exactly the constraints of a model rule.
    pub fn matches(&self, model: &SirusModel, index: usize) -> bool {
        let rule = &model.rules[index].rule;
        rule.path.len() == self.conditions.len()
            && rule
                .path
                .constraints()
                .iter()
                .zip(&rule.cut_values)
                .zip(&self.conditions)
                .all(|((c, &cut), p)| model.feature_names[c.feature] == p.feature && c.side == p.side && cut == p.cut)
    }
}
