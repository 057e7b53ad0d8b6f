use std::collections::HashMap;
use std::fmt::Write as _;

use super::{Branch, Bus, BusKind, CaseError, Generator, NetworkCase};

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Ident(String),
    Number(f64),
    Text(String),
    Open(char),
    Close(char),
    Semi,
    Comma,
    Assign,
    Newline,
    Other(char),
}

fn parse_err(line: usize, message: impl Into<String>) -> CaseError {
    CaseError::Parse {
        line,
        message: message.into(),
    }
}

/// Split MATLAB source into tokens tagged with their 1-based line.
fn lex(text: &str) -> Result<Vec<(Token, usize)>, CaseError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut line = 1;
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        match c {
            '\n' => {
                out.push((Token::Newline, line));
                line += 1;
                i += 1;
            }
            '%' | '#' => {
                while i < chars.len() && chars[i] != '\n' {
                    i += 1;
                }
            }
            '.' if chars[i..].starts_with(&['.', '.', '.']) => {
                // continuation: drop the rest of the line and the newline
                while i < chars.len() && chars[i] != '\n' {
                    i += 1;
                }
                i += 1;
                line += 1;
            }
            '\'' | '"' => {
                let quote = c;
                let start = line;
                let mut s = String::new();
                i += 1;
                loop {
                    match chars.get(i) {
                        None | Some('\n') => return Err(parse_err(start, "unterminated string")),
                        Some(&ch) if ch == quote => {
                            if chars.get(i + 1) == Some(&quote) {
                                s.push(quote);
                                i += 2;
                            } else {
                                i += 1;
                                break;
                            }
                        }
                        Some(&ch) => {
                            s.push(ch);
                            i += 1;
                        }
                    }
                }
                out.push((Token::Text(s), start));
            }
            '[' | '{' | '(' => {
                out.push((Token::Open(c), line));
                i += 1;
            }
            ']' | '}' | ')' => {
                out.push((Token::Close(c), line));
                i += 1;
            }
            ';' => {
                out.push((Token::Semi, line));
                i += 1;
            }
            ',' => {
                out.push((Token::Comma, line));
                i += 1;
            }
            '=' => {
                out.push((Token::Assign, line));
                i += 1;
            }
            c if c.is_whitespace() => i += 1,
            c if c.is_ascii_digit()
                || ((c == '-' || c == '+' || c == '.')
                    && chars.get(i + 1).is_some_and(|n| n.is_ascii_digit() || *n == '.' || *n == 'I' || *n == 'N')) =>
            {
                let start = i;
                i += 1;
                while i < chars.len() {
                    let ch = chars[i];
                    let exp_sign = (ch == '-' || ch == '+') && matches!(chars[i - 1], 'e' | 'E');
                    if ch.is_ascii_alphanumeric() || ch == '.' || exp_sign {
                        i += 1;
                    } else {
                        break;
                    }
                }
                let lit: String = chars[start..i].iter().collect();
                let value = lit
                    .parse::<f64>()
                    .map_err(|_| parse_err(line, format!("invalid number '{lit}'")))?;
                out.push((Token::Number(value), line));
            }
            c if c.is_alphabetic() || c == '_' => {
                let start = i;
                while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_' || chars[i] == '.') {
                    i += 1;
                }
                let word: String = chars[start..i].iter().collect();
                let token = match word.as_str() {
                    "Inf" | "inf" => Token::Number(f64::INFINITY),
                    "NaN" | "nan" => Token::Number(f64::NAN),
                    _ => Token::Ident(word),
                };
                out.push((token, line));
            }
            other => {
                out.push((Token::Other(other), line));
                i += 1;
            }
        }
    }
    Ok(out)
}

#[derive(Debug)]
struct Matrix {
    rows: Vec<(Vec<f64>, usize)>,
}

#[derive(Debug)]
enum Value {
    Number(f64),
    Text(String),
    Matrix(Matrix),
    Ignored,
}

struct Parser {
    tokens: Vec<(Token, usize)>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos).map(|t| &t.0)
    }

    fn line(&self) -> usize {
        self.tokens
            .get(self.pos)
            .or(self.tokens.last())
            .map_or(1, |t| t.1)
    }

    fn skip_statement(&mut self) {
        let mut depth = 0usize;
        while let Some(t) = self.peek() {
            match t {
                Token::Open(_) => depth += 1,
                Token::Close(_) => depth = depth.saturating_sub(1),
                Token::Semi | Token::Newline if depth == 0 => {
                    self.pos += 1;
                    return;
                }
                _ => {}
            }
            self.pos += 1;
        }
    }

    fn matrix(&mut self, open_line: usize) -> Result<Matrix, CaseError> {
        let mut rows = Vec::new();
        let mut row = Vec::new();
        let mut row_line = open_line;
        loop {
            let line = self.line();
            let Some(tok) = self.peek().cloned() else {
                return Err(parse_err(open_line, "unterminated matrix"));
            };
            self.pos += 1;
            match tok {
                Token::Number(v) => {
                    if row.is_empty() {
                        row_line = line;
                    }
                    row.push(v);
                }
                Token::Comma => {}
                Token::Semi | Token::Newline => {
                    if !row.is_empty() {
                        rows.push((std::mem::take(&mut row), row_line));
                    }
                }
                Token::Close(']') => {
                    if !row.is_empty() {
                        rows.push((row, row_line));
                    }
                    return Ok(Matrix { rows });
                }
                other => return Err(parse_err(line, format!("unexpected {other:?} inside matrix"))),
            }
        }
    }

    fn value(&mut self) -> Result<Value, CaseError> {
        let line = self.line();
        match self.peek().cloned() {
            Some(Token::Open('[')) => {
                self.pos += 1;
                let m = self.matrix(line)?;
                self.skip_statement();
                Ok(Value::Matrix(m))
            }
            Some(Token::Number(v)) => {
                self.pos += 1;
                match self.peek() {
                    None | Some(Token::Semi) | Some(Token::Newline) => {
                        self.skip_statement();
                        Ok(Value::Number(v))
                    }
                    _ => Err(parse_err(line, "expected end of statement after number")),
                }
            }
            Some(Token::Text(s)) => {
                self.pos += 1;
                self.skip_statement();
                Ok(Value::Text(s))
            }
            Some(_) => {
                self.skip_statement();
                Ok(Value::Ignored)
            }
            None => Err(parse_err(line, "missing value after '='")),
        }
    }
}

struct Fields {
    name: String,
    values: HashMap<String, (Value, usize)>,
}

fn collect_fields(text: &str) -> Result<Fields, CaseError> {
    let mut p = Parser { tokens: lex(text)?, pos: 0 };
    let mut name = String::from("case");
    let mut values = HashMap::new();
    while let Some(tok) = p.peek().cloned() {
        let line = p.line();
        match tok {
            Token::Newline | Token::Semi | Token::Comma => p.pos += 1,
            Token::Ident(word) if word == "function" => {
                // function mpc = NAME
                let mut last = None;
                p.pos += 1;
                while let Some(t) = p.peek() {
                    match t {
                        Token::Newline | Token::Semi => break,
                        Token::Ident(w) => last = Some(w.clone()),
                        _ => {}
                    }
                    p.pos += 1;
                }
                if let Some(w) = last {
                    name = w;
                }
            }
            Token::Ident(word) if word.starts_with("mpc.") => {
                p.pos += 1;
                if p.peek() != Some(&Token::Assign) {
                    return Err(parse_err(line, format!("expected '=' after {word}")));
                }
                p.pos += 1;
                let field = word["mpc.".len()..].to_string();
                let v = p.value()?;
                values.insert(field, (v, line));
            }
            _ => p.skip_statement(),
        }
    }
    Ok(Fields { name, values })
}

impl Fields {
    fn matrix(&self, key: &str, min_cols: usize) -> Result<&Matrix, CaseError> {
        match self.values.get(key) {
            Some((Value::Matrix(m), _)) => {
                for (row, line) in &m.rows {
                    if row.len() < min_cols {
                        return Err(parse_err(
                            *line,
                            format!("mpc.{key} row has {} columns, need at least {min_cols}", row.len()),
                        ));
                    }
                }
                Ok(m)
            }
            Some((_, line)) => Err(parse_err(*line, format!("mpc.{key} must be a matrix"))),
            None => Err(CaseError::Validation(format!("missing mpc.{key}"))),
        }
    }
}

fn as_index(v: f64, line: usize, what: &str) -> Result<u32, CaseError> {
    if v.fract() != 0.0 || !(1.0..=u32::MAX as f64).contains(&v) {
        return Err(parse_err(line, format!("{what} must be a positive integer, got {v}")));
    }
    Ok(v as u32)
}

/// Parse a MATPOWER version-2 case file into a validated per-unit network.
pub fn parse_matpower_case(text: &str) -> Result<NetworkCase, CaseError> {
    let fields = collect_fields(text)?;
    if let Some((Value::Text(v), line)) = fields.values.get("version") {
        if v != "2" {
            return Err(parse_err(*line, format!("unsupported case format version '{v}'")));
        }
    }
    let base_mva = match fields.values.get("baseMVA") {
        Some((Value::Number(v), _)) => *v,
        Some((_, line)) => return Err(parse_err(*line, "mpc.baseMVA must be a number")),
        None => return Err(CaseError::Validation("missing mpc.baseMVA".into())),
    };
    if !(base_mva > 0.0) || !base_mva.is_finite() {
        return Err(CaseError::Validation(format!("baseMVA must be positive, got {base_mva}")));
    }
    let bus_m = fields.matrix("bus", 13)?;
    let gen_m = fields.matrix("gen", 10)?;
    let branch_m = fields.matrix("branch", 11)?;
    let cost_m = fields.matrix("gencost", 4)?;

    let mut index = HashMap::new();
    let mut buses = Vec::with_capacity(bus_m.rows.len());
    let mut slack = None;
    for (row, line) in &bus_m.rows {
        let id = as_index(row[0], *line, "bus number")?;
        if index.insert(id, buses.len()).is_some() {
            return Err(CaseError::Validation(format!("duplicate bus number {id}")));
        }
        let kind = match row[1] {
            1.0 => BusKind::PQ,
            2.0 => BusKind::PV,
            3.0 => {
                if slack.is_some() {
                    return Err(CaseError::Validation("more than one reference bus".into()));
                }
                slack = Some(buses.len());
                BusKind::ThetaV
            }
            t => return Err(CaseError::Validation(format!("bus {id}: unsupported bus type {t}"))),
        };
        buses.push(Bus {
            id,
            kind,
            pd: row[2] / base_mva,
            qd: row[3] / base_mva,
            gs: row[4] / base_mva,
            bs: row[5] / base_mva,
            vmax: row[11],
            vmin: row[12],
        });
    }
    let slack = slack.ok_or_else(|| CaseError::Validation("no reference (type 3) bus".into()))?;
    let lookup = |v: f64, line: usize, what: &str| -> Result<usize, CaseError> {
        let id = as_index(v, line, what)?;
        index
            .get(&id)
            .copied()
            .ok_or_else(|| CaseError::Validation(format!("{what} {id} (line {line}) does not exist")))
    };

    if cost_m.rows.len() < gen_m.rows.len() {
        return Err(CaseError::Validation(format!(
            "mpc.gencost has {} rows for {} generators",
            cost_m.rows.len(),
            gen_m.rows.len()
        )));
    }
    let mut generators = Vec::new();
    for ((row, line), (cost, cost_line)) in gen_m.rows.iter().zip(&cost_m.rows) {
        let bus = lookup(row[0], *line, "generator bus")?;
        let (cost_a, cost_b, cost_c) = polynomial_cost(cost, *cost_line)?;
        if row[7] <= 0.0 {
            continue;
        }
        generators.push(Generator {
            bus,
            pmax: row[8] / base_mva,
            pmin: row[9] / base_mva,
            qmax: row[3] / base_mva,
            qmin: row[4] / base_mva,
            v_set: row[5],
            cost_a: cost_a * base_mva * base_mva,
            cost_b: cost_b * base_mva,
            cost_c,
        });
    }

    let mut branches = Vec::new();
    for (row, line) in &branch_m.rows {
        let from = lookup(row[0], *line, "branch from bus")?;
        let to = lookup(row[1], *line, "branch to bus")?;
        if row[10] <= 0.0 {
            continue;
        }
        branches.push(Branch {
            from,
            to,
            r: row[2],
            x: row[3],
            b_charging: row[4],
            s_max: row[5] / base_mva,
            tap_ratio: if row[8] == 0.0 { 1.0 } else { row[8] },
            phase_shift: row[9].to_radians(),
        });
    }

    // PV/ThetaV status follows the in-service units.
    let mut has_gen = vec![false; buses.len()];
    for g in &generators {
        has_gen[g.bus] = true;
    }
    for (b, &g) in buses.iter_mut().zip(&has_gen) {
        match (b.kind, g) {
            (BusKind::PV, false) => b.kind = BusKind::PQ,
            (BusKind::PQ, true) => b.kind = BusKind::PV,
            _ => {}
        }
    }

    let case = NetworkCase {
        name: fields.name,
        base_mva,
        buses,
        branches,
        generators,
        slack,
    };
    case.validate()?;
    Ok(case)
}

/// `(c2, c1, c0)` in source units from a polynomial gencost row.
fn polynomial_cost(row: &[f64], line: usize) -> Result<(f64, f64, f64), CaseError> {
    if row[0] == 1.0 {
        return Err(CaseError::Validation(format!(
            "gencost line {line}: piecewise-linear costs are not supported"
        )));
    }
    if row[0] != 2.0 {
        return Err(CaseError::Validation(format!("gencost line {line}: unknown cost model {}", row[0])));
    }
    let n = row[3];
    if n.fract() != 0.0 || n < 0.0 || row.len() < 4 + n as usize {
        return Err(parse_err(line, format!("gencost row does not hold {n} coefficients")));
    }
    let coeffs = &row[4..4 + n as usize];
    let (high, low) = coeffs.split_at(coeffs.len().saturating_sub(3));
    if high.iter().any(|&c| c != 0.0) {
        return Err(CaseError::Validation(format!(
            "gencost line {line}: polynomial costs above degree 2 are not supported"
        )));
    }
    let mut c = [0.0; 3];
    for (slot, &v) in c.iter_mut().rev().zip(low.iter().rev()) {
        *slot = v;
    }
    Ok((c[0], c[1], c[2]))
}

/// Smallest-magnitude decimal whose forward conversion reproduces `target`
/// exactly. Falls back to the plain inverse if no nearby float maps back.
fn exact_source(target: f64, guess: f64, forward: impl Fn(f64) -> f64) -> f64 {
    if !guess.is_finite() || forward(guess) == target {
        return guess;
    }
    let mut up = guess;
    let mut down = guess;
    for _ in 0..16 {
        up = up.next_up();
        down = down.next_down();
        if forward(up) == target {
            return up;
        }
        if forward(down) == target {
            return down;
        }
    }
    guess
}

/// Serialize a case back to MATPOWER format. Parsing the output yields a
/// case equal to the input field by field.
pub fn write_matpower_case(case: &NetworkCase) -> String {
    let base = case.base_mva;
    let pu = |x: f64| exact_source(x, x * base, |y| y / base);
    let deg = |x: f64| exact_source(x, x.to_degrees(), f64::to_radians);
    let mut s = String::new();
    let _ = writeln!(s, "function mpc = {}", case.name);
    let _ = writeln!(s, "mpc.version = '2';");
    let _ = writeln!(s, "mpc.baseMVA = {base:?};");
    let _ = writeln!(s, "\n%\tbus_i\ttype\tPd\tQd\tGs\tBs\tarea\tVm\tVa\tbaseKV\tzone\tVmax\tVmin");
    let _ = writeln!(s, "mpc.bus = [");
    for b in &case.buses {
        let code = match b.kind {
            BusKind::PQ => 1,
            BusKind::PV => 2,
            BusKind::ThetaV => 3,
        };
        let _ = writeln!(
            s,
            "\t{}\t{}\t{:?}\t{:?}\t{:?}\t{:?}\t1\t1\t0\t0\t1\t{:?}\t{:?};",
            b.id,
            code,
            pu(b.pd),
            pu(b.qd),
            pu(b.gs),
            pu(b.bs),
            b.vmax,
            b.vmin
        );
    }
    let _ = writeln!(s, "];\n\n%\tbus\tPg\tQg\tQmax\tQmin\tVg\tmBase\tstatus\tPmax\tPmin");
    let _ = writeln!(s, "mpc.gen = [");
    for g in &case.generators {
        let _ = writeln!(
            s,
            "\t{}\t0\t0\t{:?}\t{:?}\t{:?}\t{base:?}\t1\t{:?}\t{:?};",
            case.buses[g.bus].id,
            pu(g.qmax),
            pu(g.qmin),
            g.v_set,
            pu(g.pmax),
            pu(g.pmin)
        );
    }
    let _ = writeln!(s, "];\n\n%\tfbus\ttbus\tr\tx\tb\trateA\trateB\trateC\tratio\tangle\tstatus\tangmin\tangmax");
    let _ = writeln!(s, "mpc.branch = [");
    for br in &case.branches {
        let rate = pu(br.s_max);
        let _ = writeln!(
            s,
            "\t{}\t{}\t{:?}\t{:?}\t{:?}\t{rate:?}\t{rate:?}\t{rate:?}\t{:?}\t{:?}\t1\t-360\t360;",
            case.buses[br.from].id,
            case.buses[br.to].id,
            br.r,
            br.x,
            br.b_charging,
            br.tap_ratio,
            deg(br.phase_shift)
        );
    }
    let _ = writeln!(s, "];\n\n%\t2\tstartup\tshutdown\tn\tc2\tc1\tc0");
    let _ = writeln!(s, "mpc.gencost = [");
    for g in &case.generators {
        let c2 = exact_source(g.cost_a, g.cost_a / (base * base), |y| y * base * base);
        let c1 = exact_source(g.cost_b, g.cost_b / base, |y| y * base);
        let _ = writeln!(s, "\t2\t0\t0\t3\t{c2:?}\t{c1:?}\t{:?};", g.cost_c);
    }
    let _ = writeln!(s, "];");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_BUS: &str = "\
function mpc = two_bus
mpc.version = '2';
mpc.baseMVA = 100;
mpc.bus = [
    1 3 0  0  0 0 1 1 0 135 1 1.1 0.9;
    2 1 50 20 0 0 1 1 0 135 1 1.1 0.9;
];
mpc.gen = [
    1 0 0 100 -100 1.0 100 1 200 0;
];
mpc.branch = [
    1 2 0.01 0.1 0.02 150 150 150 0 0 1 -360 360;
];
mpc.gencost = [
    2 0 0 3 0.01 10 5;
];
";

    #[test]
    fn two_bus_case_parses() {
        let case = parse_matpower_case(TWO_BUS).unwrap();
        assert_eq!(case.name, "two_bus");
        assert_eq!((case.buses.len(), case.branches.len(), case.generators.len()), (2, 1, 1));
        assert_eq!(case.buses[1].pd, 0.5);
        assert_eq!(case.branches[0].s_max, 1.5);
        assert_eq!(case.branches[0].tap_ratio, 1.0);
        let g = &case.generators[0];
        assert_eq!((g.pmax, g.qmin), (2.0, -1.0));
        // 0.01 $/MW²h on a 100 MVA base is 100 $/pu²h
        assert!((g.cost_a - 100.0).abs() < 1e-12);
        assert!((g.cost_b - 1000.0).abs() < 1e-12);
        assert_eq!(g.cost_c, 5.0);
    }

    fn raw_rows(text: &str, field: &str) -> usize {
        let start = text.find(&format!("mpc.{field} = [")).unwrap();
        let body = &text[start..];
        let end = body.find("];").unwrap();
        body[..end].lines().skip(1).filter(|l| l.trim_end().ends_with(';')).count()
    }

    #[test]
    fn case30_counts_match_raw_rows() {
        let text = include_str!("../../data/case30.m");
        let case = parse_matpower_case(text).unwrap();
        assert_eq!(case.generators.len(), raw_rows(text, "gen"));
        assert_eq!(case.branches.len(), raw_rows(text, "branch"));
        assert_eq!(case.buses.len(), raw_rows(text, "bus"));
        assert_eq!(case.buses.len(), 30);
        assert_eq!(case.buses.iter().filter(|b| b.kind == BusKind::ThetaV).count(), 1);
    }

    #[test]
    fn per_unit_pmax_matches_source() {
        let text = include_str!("../../data/case30.m");
        let case = parse_matpower_case(text).unwrap();
        let source_pmax = [80.0, 80.0, 50.0, 55.0, 30.0, 40.0];
        for (g, mw) in case.generators.iter().zip(source_pmax) {
            assert!((g.pmax * case.base_mva - mw).abs() <= 1e-12 * mw);
        }
    }

    #[test]
    fn status_zero_rows_are_dropped() {
        let text = TWO_BUS.replace(
            "1 2 0.01 0.1 0.02 150 150 150 0 0 1 -360 360;",
            "1 2 0.01 0.1 0.02 150 150 150 0 0 1 -360 360;\n1 2 0.01 0.1 0 0 0 0 0 0 0 -360 360;",
        );
        let case = parse_matpower_case(&text).unwrap();
        assert_eq!(case.branches.len(), 1);
        assert_eq!(case.buses.len(), 2);
    }

    #[test]
    fn missing_slack_is_a_validation_error() {
        let text = TWO_BUS.replace("1 3 0  0", "1 2 0  0");
        assert!(matches!(parse_matpower_case(&text), Err(CaseError::Validation(_))));
    }

    #[test]
    fn dangling_branch_is_a_validation_error() {
        let text = TWO_BUS.replace("1 2 0.01", "1 7 0.01");
        assert!(matches!(parse_matpower_case(&text), Err(CaseError::Validation(_))));
    }

    #[test]
    fn piecewise_cost_is_rejected() {
        let text = TWO_BUS.replace("2 0 0 3 0.01 10 5;", "1 0 0 2 0 0 100 1000;");
        let err = parse_matpower_case(&text).unwrap_err();
        assert!(err.to_string().contains("piecewise"), "{err}");
    }

    #[test]
    fn cubic_cost_is_rejected() {
        let text = TWO_BUS.replace("2 0 0 3 0.01 10 5;", "2 0 0 4 1 0.01 10 5;");
        assert!(matches!(parse_matpower_case(&text), Err(CaseError::Validation(_))));
        let padded = TWO_BUS.replace("2 0 0 3 0.01 10 5;", "2 0 0 4 0 0.01 10 5;");
        assert!(parse_matpower_case(&padded).is_ok());
    }

    #[test]
    fn malformed_matrix_reports_line() {
        let text = TWO_BUS.replace("2 1 50 20 0 0 1 1 0 135 1 1.1 0.9;", "2 1 50 20 0 0 1 1 0 135 1 1.1 0.9 foo;");
        match parse_matpower_case(&text) {
            Err(CaseError::Parse { line, .. }) => assert_eq!(line, 6),
            other => panic!("{other:?}"),
        }
        let short = TWO_BUS.replace("2 1 50 20 0 0 1 1 0 135 1 1.1 0.9;", "2 1 50;");
        assert!(matches!(parse_matpower_case(&short), Err(CaseError::Parse { line: 6, .. })));
    }

    #[test]
    fn comma_separated_and_continued_rows() {
        let text = TWO_BUS.replace(
            "    1 0 0 100 -100 1.0 100 1 200 0;",
            "    1, 0, 0, 100, ...\n -100, 1.0, 100, 1, 200, 0;",
        );
        assert_eq!(parse_matpower_case(&text).unwrap(), parse_matpower_case(TWO_BUS).unwrap());
    }

    #[test]
    fn round_trip_is_exact() {
        for case in [NetworkCase::ieee30(), parse_matpower_case(TWO_BUS).unwrap()] {
            let text = write_matpower_case(&case);
            assert_eq!(parse_matpower_case(&text).unwrap(), case);
        }
    }

    #[test]
    fn garbage_does_not_panic() {
        for text in ["", "mpc.bus = [", "mpc.baseMVA = ;", "'", "mpc.bus = [1 2; 3]; mpc.baseMVA = 1"] {
            assert!(parse_matpower_case(text).is_err());
        }
    }
}
