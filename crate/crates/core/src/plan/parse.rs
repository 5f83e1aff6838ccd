use std::collections::BTreeMap;

use thiserror::Error;

use super::{Action, AgentPlan, Grasp, JointPlan};
use crate::world::Pose;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlanError {
    #[error("line {line}, column {column}: expected {expected}")]
    Parse { line: usize, column: usize, expected: String },
    #[error("line {line}, column {column}: unknown verb `{token}`")]
    UnknownVerb { token: String, line: usize, column: usize },
    #[error("line {line}: duplicate plan for agent `{agent_id}`")]
    DuplicateAgent { agent_id: String, line: usize },
    #[error("cannot serialize an empty joint plan")]
    EmptyPlan,
}

const VERBS: [&str; 7] = ["PICK", "PLACE", "MOVE", "TWIST", "OPEN", "CLOSE", "WAIT"];

struct Cursor {
    chars: Vec<char>,
    pos: usize,
    line: usize,
}

impl Cursor {
    fn new(src: &str, line: usize) -> Self {
        Cursor { chars: src.chars().collect(), pos: 0, line }
    }

    fn column(&self) -> usize {
        self.pos + 1
    }

    fn skip_ws(&mut self) {
        while self.chars.get(self.pos).is_some_and(|c| c.is_whitespace()) {
            self.pos += 1;
        }
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn at_end(&mut self) -> bool {
        self.skip_ws();
        self.pos >= self.chars.len()
    }

    fn error(&self, expected: impl Into<String>) -> PlanError {
        PlanError::Parse { line: self.line, column: self.column(), expected: expected.into() }
    }

    fn word(&mut self) -> Option<(String, usize)> {
        self.skip_ws();
        let start = self.pos;
        while self.peek().is_some_and(|c| c.is_ascii_alphanumeric() || c == '_') {
            self.pos += 1;
        }
        if self.pos == start {
            None
        } else {
            Some((self.chars[start..self.pos].iter().collect(), start + 1))
        }
    }

    fn ident(&mut self, what: &str) -> Result<String, PlanError> {
        self.skip_ws();
        match self.word() {
            Some((w, _)) => Ok(w),
            None => Err(self.error(what)),
        }
    }

    fn keyword(&mut self, kw: &str) -> Result<(), PlanError> {
        self.skip_ws();
        let save = self.pos;
        match self.word() {
            Some((w, _)) if w == kw => Ok(()),
            _ => {
                self.pos = save;
                Err(self.error(format!("`{kw}`")))
            }
        }
    }

    fn symbol(&mut self, s: &str) -> Result<(), PlanError> {
        self.skip_ws();
        let n = s.chars().count();
        if self.chars.len() >= self.pos + n && self.chars[self.pos..self.pos + n].iter().copied().eq(s.chars()) {
            self.pos += n;
            Ok(())
        } else {
            Err(self.error(format!("`{s}`")))
        }
    }

    fn try_symbol(&mut self, s: &str) -> bool {
        let save = self.pos;
        if self.symbol(s).is_ok() {
            true
        } else {
            self.pos = save;
            false
        }
    }

    fn number(&mut self) -> Result<f64, PlanError> {
        self.skip_ws();
        let start = self.pos;
        let mut end = self.pos;
        if matches!(self.chars.get(end), Some('+') | Some('-')) {
            end += 1;
        }
        let digits_start = end;
        while self.chars.get(end).is_some_and(|c| c.is_ascii_digit()) {
            end += 1;
        }
        let mut digits = end - digits_start;
        if self.chars.get(end) == Some(&'.') {
            end += 1;
            let frac_start = end;
            while self.chars.get(end).is_some_and(|c| c.is_ascii_digit()) {
                end += 1;
            }
            digits += end - frac_start;
        }
        if digits == 0 {
            return Err(self.error("number"));
        }
        if matches!(self.chars.get(end), Some('e') | Some('E')) {
            let mut e = end + 1;
            if matches!(self.chars.get(e), Some('+') | Some('-')) {
                e += 1;
            }
            let exp_start = e;
            while self.chars.get(e).is_some_and(|c| c.is_ascii_digit()) {
                e += 1;
            }
            if e > exp_start {
                end = e;
            }
        }
        let text: String = self.chars[start..end].iter().collect();
        match text.parse::<f64>() {
            Ok(v) if v.is_finite() => {
                self.pos = end;
                Ok(v)
            }
            _ => Err(self.error("finite number")),
        }
    }

    fn pose(&mut self) -> Result<Pose, PlanError> {
        self.symbol("(")?;
        let x = self.number()?;
        self.symbol(",")?;
        let y = self.number()?;
        self.symbol(",")?;
        let z = self.number()?;
        let yaw = if self.try_symbol(",") { self.number()? } else { 0.0 };
        self.symbol(")")?;
        Ok(Pose::new(x, y, z, yaw))
    }

    fn action(&mut self) -> Result<Action, PlanError> {
        self.skip_ws();
        let Some((verb, column)) = self.word() else {
            return Err(self.error("action verb"));
        };
        if !VERBS.contains(&verb.as_str()) {
            return Err(PlanError::UnknownVerb { token: verb, line: self.line, column });
        }
        Ok(match verb.as_str() {
            "PICK" => {
                let object = self.ident("object id")?;
                let save = self.pos;
                let grasp = match self.word() {
                    Some((w, _)) if w == "HANDLE" => Some(Grasp::Handle(self.ident("handle id")?)),
                    Some((w, _)) if w == "OFFSET" => {
                        self.skip_ws();
                        let at = self.pos;
                        let s = self.number()?;
                        if s < 0.0 {
                            self.pos = at;
                            return Err(self.error("non-negative grasp offset"));
                        }
                        Some(Grasp::Offset(s))
                    }
                    _ => {
                        self.pos = save;
                        None
                    }
                };
                Action::Pick { object, grasp }
            }
            "PLACE" => {
                let object = self.ident("object id")?;
                self.keyword("AT")?;
                Action::Place { object, at: self.pose()? }
            }
            "MOVE" => {
                self.keyword("TO")?;
                Action::Move { to: self.pose()? }
            }
            "TWIST" => {
                self.skip_ws();
                let at = self.pos;
                let degrees = self.number()?;
                if !(-180.0..=180.0).contains(&degrees) {
                    self.pos = at;
                    return Err(self.error("twist degrees in [-180, 180]"));
                }
                Action::Twist { degrees }
            }
            "OPEN" => Action::Open,
            "CLOSE" => Action::Close,
            _ => Action::Wait,
        })
    }
}

/// True for lines that must parse as a plan line: the first word is `PLAN`.
fn is_plan_line(line: &str) -> bool {
    let t = line.trim_start();
    t.strip_prefix("PLAN").is_some_and(|rest| rest.is_empty() || !rest.starts_with(|c: char| c.is_ascii_alphanumeric() || c == '_'))
}

/// Parses a backend response. Lines whose first word is not `PLAN` are
/// ignored; agent plans are padded with WAIT to a common length.
pub fn parse_plan(text: &str) -> Result<JointPlan, PlanError> {
    let mut plans: BTreeMap<String, AgentPlan> = BTreeMap::new();
    let mut line_count = 0;
    for (i, raw) in text.lines().enumerate() {
        line_count = i + 1;
        if !is_plan_line(raw) {
            continue;
        }
        let mut c = Cursor::new(raw, i + 1);
        c.keyword("PLAN")?;
        let agent_id = c.ident("agent id")?;
        c.symbol(":")?;
        let mut actions = vec![c.action()?];
        while !c.at_end() {
            if !c.try_symbol("->") {
                return Err(c.error("`->` or end of line"));
            }
            actions.push(c.action()?);
        }
        if plans.contains_key(&agent_id) {
            return Err(PlanError::DuplicateAgent { agent_id, line: i + 1 });
        }
        plans.insert(agent_id.clone(), AgentPlan { agent_id, actions });
    }
    if plans.is_empty() {
        return Err(PlanError::Parse { line: line_count.max(1), column: 1, expected: "a PLAN line".into() });
    }
    let mut plan = JointPlan { plans };
    plan.pad();
    Ok(plan)
}

/// Canonical text: one PLAN line per agent in id order, padded with WAIT.
pub fn serialize_plan(plan: &JointPlan) -> Result<String, PlanError> {
    if plan.plans.is_empty() || plan.is_empty() {
        return Err(PlanError::EmptyPlan);
    }
    let n = plan.len();
    let mut out = String::new();
    for (agent, p) in &plan.plans {
        let actions: Vec<String> =
            (0..n).map(|k| p.actions.get(k).unwrap_or(&Action::Wait).to_string()).collect();
        out.push_str(&format!("PLAN {agent}: {}\n", actions.join(" -> ")));
    }
    Ok(out)
}
