use std::collections::{BTreeMap, HashSet};

use super::ast::*;
use crate::devices::conveyor::Polarity;
use crate::devices::mosfet::MosfetPolarity;
use crate::error::{Error, Result};
use crate::measure::{MeasureKind, MeasureSpec, Probe};
use crate::transient::IntegrationMethod;
use crate::units::parse_value;

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Word(String),
    /// Parenthesized argument list, split on whitespace and commas.
    Group(Vec<String>),
    Assign(String, String),
}

/// One logical line after comment stripping and `+` continuation joining.
struct Line {
    number: usize,
    tokens: Vec<Token>,
}

fn tokenize(text: &str, line: usize) -> Result<Vec<Token>> {
    #[derive(PartialEq)]
    enum Raw {
        Word(String),
        Eq,
        Group(Vec<String>),
    }
    let mut raw = Vec::new();
    let mut chars = text.chars().peekable();
    while let Some(&c) = chars.peek() {
        if c.is_whitespace() {
            chars.next();
        } else if c == '=' {
            chars.next();
            raw.push(Raw::Eq);
        } else if c == '(' {
            chars.next();
            let mut inner = String::new();
            let mut closed = false;
            for c in chars.by_ref() {
                if c == ')' {
                    closed = true;
                    break;
                }
                if c == '(' {
                    return Err(Error::parse(line, "nested parentheses are not supported"));
                }
                inner.push(c);
            }
            if !closed {
                return Err(Error::parse(line, "unbalanced '('"));
            }
            raw.push(Raw::Group(
                inner
                    .split(|c: char| c.is_whitespace() || c == ',')
                    .filter(|s| !s.is_empty())
                    .map(str::to_string)
                    .collect(),
            ));
        } else if c == ')' {
            return Err(Error::parse(line, "unbalanced ')'"));
        } else {
            let mut word = String::new();
            while let Some(&c) = chars.peek() {
                if c.is_whitespace() || c == '=' || c == '(' || c == ')' {
                    break;
                }
                word.push(c);
                chars.next();
            }
            raw.push(Raw::Word(word));
        }
    }

    let mut out = Vec::with_capacity(raw.len());
    let mut it = raw.into_iter().peekable();
    while let Some(tok) = it.next() {
        match tok {
            Raw::Word(w) => {
                if it.peek() == Some(&Raw::Eq) {
                    it.next();
                    match it.next() {
                        Some(Raw::Word(v)) => out.push(Token::Assign(w.to_ascii_lowercase(), v)),
                        _ => return Err(Error::parse(line, format!("'{w}=' needs a value"))),
                    }
                } else {
                    out.push(Token::Word(w));
                }
            }
            Raw::Eq => return Err(Error::parse(line, "unexpected '='")),
            Raw::Group(g) => out.push(Token::Group(g)),
        }
    }
    Ok(out)
}

fn logical_lines(text: &str) -> Result<(String, Vec<Line>)> {
    let mut physical = text.split('\n').map(|l| l.strip_suffix('\r').unwrap_or(l));
    let title = physical.next().unwrap_or("").trim().to_string();

    let mut joined: Vec<(usize, String)> = Vec::new();
    for (idx, raw) in physical.enumerate() {
        let number = idx + 2;
        let content = raw.split(';').next().unwrap_or("");
        let trimmed = content.trim();
        if trimmed.is_empty() || trimmed.starts_with('*') {
            continue;
        }
        if let Some(rest) = trimmed.strip_prefix('+') {
            match joined.last_mut() {
                Some((_, prev)) => {
                    prev.push(' ');
                    prev.push_str(rest);
                }
                None => return Err(Error::parse(number, "continuation line with nothing to continue")),
            }
        } else {
            joined.push((number, trimmed.to_string()));
        }
    }

    let lines = joined
        .into_iter()
        .map(|(number, text)| {
            Ok(Line {
                number,
                tokens: tokenize(&text, number)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((title, lines))
}

fn word(tok: &Token, line: usize, what: &str) -> Result<String> {
    match tok {
        Token::Word(w) => Ok(w.clone()),
        _ => Err(Error::parse(line, format!("expected {what}"))),
    }
}

fn parse_val(text: &str, line: usize) -> Result<Value> {
    if let Some(inner) = text.strip_prefix('{').and_then(|t| t.strip_suffix('}')) {
        let name = inner.trim();
        if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
            return Err(Error::parse(line, format!("bad parameter reference '{text}'")));
        }
        return Ok(Value::Param(name.to_ascii_lowercase()));
    }
    parse_value(text, line).map(Value::Num)
}

fn literal(text: &str, line: usize) -> Result<f64> {
    parse_value(text, line)
}

fn expect_nodes(name: &str, tokens: &[Token], count: usize, line: usize) -> Result<Vec<String>> {
    if tokens.len() < count {
        return Err(Error::parse(
            line,
            format!("{name}: expected {count} nodes, found {}", tokens.len()),
        ));
    }
    tokens[..count]
        .iter()
        .map(|t| word(t, line, "node name"))
        .collect()
}

fn parse_source(name: &str, rest: &[Token], line: usize) -> Result<SourceExpr> {
    let bad = || Error::parse(line, format!("{name}: expected DC value, SIN(...) or PULSE(...)"));
    match rest {
        [Token::Word(v)] if !v.eq_ignore_ascii_case("dc") => Ok(SourceExpr::Dc(parse_val(v, line)?)),
        [Token::Word(dc), Token::Word(v)] if dc.eq_ignore_ascii_case("dc") => {
            Ok(SourceExpr::Dc(parse_val(v, line)?))
        }
        [Token::Word(f), Token::Group(args)] => {
            let vals = args
                .iter()
                .map(|a| parse_val(a, line))
                .collect::<Result<Vec<_>>>()?;
            match f.to_ascii_lowercase().as_str() {
                "sin" => {
                    if !(3..=4).contains(&vals.len()) {
                        return Err(Error::parse(
                            line,
                            format!("{name}: SIN takes 3 or 4 arguments (offset amplitude freq [delay])"),
                        ));
                    }
                    let mut it = vals.into_iter();
                    Ok(SourceExpr::Sin {
                        offset: it.next().unwrap(),
                        amplitude: it.next().unwrap(),
                        freq: it.next().unwrap(),
                        delay: it.next(),
                    })
                }
                "pulse" => {
                    let arr: [Value; 7] = vals.try_into().map_err(|_| {
                        Error::parse(
                            line,
                            format!("{name}: PULSE takes 7 arguments (v1 v2 delay rise fall width period)"),
                        )
                    })?;
                    Ok(SourceExpr::Pulse(Box::new(arr)))
                }
                _ => Err(bad()),
            }
        }
        _ => Err(bad()),
    }
}

fn parse_conveyor(name: &str, rest: &[Token], line: usize) -> Result<ConveyorSpec> {
    let kind = match rest.first() {
        Some(Token::Word(w)) => w.to_ascii_lowercase(),
        _ => {
            return Err(Error::parse(
                line,
                format!("{name}: missing conveyor kind (cccii+, cccii-, ccii+ or ccii-)"),
            ))
        }
    };
    let (controlled, polarity) = match kind.as_str() {
        "cccii+" => (true, Polarity::Plus),
        "cccii-" => (true, Polarity::Minus),
        "ccii+" => (false, Polarity::Plus),
        "ccii-" => (false, Polarity::Minus),
        other => {
            return Err(Error::parse(
                line,
                format!("{name}: unknown conveyor kind '{other}'"),
            ))
        }
    };
    let mut spec = ConveyorSpec {
        polarity,
        controlled,
        rx: None,
        ib: None,
        beta: None,
        vmin: None,
        vmax: None,
    };
    for tok in &rest[1..] {
        let Token::Assign(key, val) = tok else {
            return Err(Error::parse(line, format!("{name}: expected key=value parameter")));
        };
        let v = Some(parse_val(val, line)?);
        let slot = match key.as_str() {
            "rx" => &mut spec.rx,
            "ib" => &mut spec.ib,
            "beta" => &mut spec.beta,
            "vmin" => &mut spec.vmin,
            "vmax" => &mut spec.vmax,
            other => {
                return Err(Error::parse(line, format!("{name}: unknown parameter '{other}'")))
            }
        };
        if slot.is_some() {
            return Err(Error::parse(line, format!("{name}: '{key}' given twice")));
        }
        *slot = v;
    }
    if controlled {
        match (&spec.rx, &spec.ib, &spec.beta) {
            (Some(_), None, None) | (None, Some(_), Some(_)) => {}
            (Some(_), Some(_), _) | (Some(_), _, Some(_)) => {
                return Err(Error::parse(
                    line,
                    format!("{name}: give either rx or (ib, beta), not both"),
                ))
            }
            _ => {
                return Err(Error::parse(
                    line,
                    format!("{name}: cccii needs rx=<ohms> or both ib=<amps> and beta=<A/V^2>"),
                ))
            }
        }
    } else if spec.ib.is_some() || spec.beta.is_some() {
        return Err(Error::parse(
            line,
            format!("{name}: ccii has a fixed rx; ib/beta apply to cccii only"),
        ));
    }
    Ok(spec)
}

fn parse_element(tokens: &[Token], line: usize) -> Result<ElementSpec> {
    let name = word(&tokens[0], line, "element name")?;
    let letter = name.chars().next().unwrap().to_ascii_uppercase();
    let args = &tokens[1..];
    let (nodes, body) = match letter {
        'R' | 'C' => {
            let nodes = expect_nodes(&name, args, 2, line)?;
            let value = match &args[2..] {
                [Token::Word(v)] => parse_val(v, line)?,
                _ => return Err(Error::parse(line, format!("{name}: expected a single value"))),
            };
            let body = if letter == 'R' {
                ElementBody::Resistor(value)
            } else {
                ElementBody::Capacitor(value)
            };
            (nodes, body)
        }
        'V' | 'I' => {
            let nodes = expect_nodes(&name, args, 2, line)?;
            let src = parse_source(&name, &args[2..], line)?;
            let body = if letter == 'V' {
                ElementBody::VSource(src)
            } else {
                ElementBody::ISource(src)
            };
            (nodes, body)
        }
        'M' => {
            let nodes = expect_nodes(&name, args, 4, line)?;
            let model = match &args[4..] {
                [Token::Word(m)] => m.to_ascii_lowercase(),
                _ => {
                    return Err(Error::parse(
                        line,
                        format!("{name}: expected 'M<name> d g s b <model>' (4 nodes)"),
                    ))
                }
            };
            (nodes, ElementBody::Mosfet { model })
        }
        'U' => {
            let nodes = expect_nodes(&name, args, 3, line)?;
            if matches!(args.get(3), Some(Token::Word(_))) {
                (nodes, ElementBody::Conveyor(parse_conveyor(&name, &args[3..], line)?))
            } else {
                return Err(Error::parse(
                    line,
                    format!("{name}: expected 'U<name> y x z <kind> ...' (3 nodes)"),
                ));
            }
        }
        'X' => {
            let words = args
                .iter()
                .map(|t| word(t, line, "node or subcircuit name"))
                .collect::<Result<Vec<_>>>()?;
            let Some((subckt, nodes)) = words.split_last() else {
                return Err(Error::parse(line, format!("{name}: missing subcircuit name")));
            };
            (
                nodes.to_vec(),
                ElementBody::Instance {
                    subckt: subckt.to_ascii_lowercase(),
                },
            )
        }
        _ => {
            return Err(Error::parse(
                line,
                format!("unknown element letter '{}' in '{name}'", name.chars().next().unwrap()),
            ))
        }
    };
    Ok(ElementSpec {
        name,
        nodes,
        body,
        line,
    })
}

fn parse_model(tokens: &[Token], line: usize) -> Result<(String, ModelSpec)> {
    let usage = || {
        Error::parse(
            line,
            ".model <name> nmos|pmos vth=<v> [beta=<a/v2> | un_cox=<a/v2> w=<m> l=<m>] [lambda=<1/v>]",
        )
    };
    let (Some(Token::Word(name)), Some(Token::Word(kind))) = (tokens.first(), tokens.get(1)) else {
        return Err(usage());
    };
    let polarity = match kind.to_ascii_lowercase().as_str() {
        "nmos" => MosfetPolarity::Nmos,
        "pmos" => MosfetPolarity::Pmos,
        _ => return Err(usage()),
    };
    let mut kv: BTreeMap<String, f64> = BTreeMap::new();
    for tok in &tokens[2..] {
        let Token::Assign(k, v) = tok else {
            return Err(usage());
        };
        if !matches!(k.as_str(), "vth" | "beta" | "un_cox" | "w" | "l" | "lambda") {
            return Err(Error::parse(line, format!(".model {name}: unknown parameter '{k}'")));
        }
        if kv.insert(k.clone(), literal(v, line)?).is_some() {
            return Err(Error::parse(line, format!(".model {name}: '{k}' given twice")));
        }
    }
    let vth = kv
        .get("vth")
        .copied()
        .ok_or_else(|| Error::parse(line, format!(".model {name}: vth is required")))?;
    let spec = ModelSpec {
        polarity,
        vth,
        beta: kv.get("beta").copied(),
        un_cox: kv.get("un_cox").copied(),
        w: kv.get("w").copied(),
        l: kv.get("l").copied(),
        lambda: kv.get("lambda").copied(),
    };
    let geometry = [spec.un_cox, spec.w, spec.l];
    let n_geom = geometry.iter().filter(|v| v.is_some()).count();
    match (spec.beta.is_some(), n_geom) {
        (true, 0) | (false, 3) => {}
        (true, _) => {
            return Err(Error::parse(
                line,
                format!(".model {name}: give beta or (un_cox, w, l), not both"),
            ))
        }
        (false, _) => {
            return Err(Error::parse(
                line,
                format!(".model {name}: needs beta or all of un_cox, w, l"),
            ))
        }
    }
    Ok((name.to_ascii_lowercase(), spec))
}

fn parse_probe(tokens: &[Token], line: usize) -> Result<(Probe, usize)> {
    match tokens {
        [Token::Word(f), Token::Group(args), ..] if args.len() == 1 => {
            let probe = match f.to_ascii_lowercase().as_str() {
                "v" => Probe::Voltage(args[0].clone()),
                "i" => Probe::Current(args[0].to_ascii_lowercase()),
                _ => return Err(Error::parse(line, format!("unknown probe '{f}(...)'"))),
            };
            Ok((probe, 2))
        }
        _ => Err(Error::parse(line, "expected a probe v(<node>) or i(<branch>)")),
    }
}

fn parse_measure(tokens: &[Token], line: usize) -> Result<MeasureSpec> {
    let usage = || {
        Error::parse(
            line,
            ".measure <name> <rms|pp|avgpow|peakpow|gain|hist> <args>",
        )
    };
    let (Some(Token::Word(name)), Some(Token::Word(kind))) = (tokens.first(), tokens.get(1)) else {
        return Err(usage());
    };
    let args = &tokens[2..];
    let single_probe = |args: &[Token]| -> Result<Probe> {
        let (p, used) = parse_probe(args, line)?;
        if used != args.len() {
            return Err(Error::parse(line, format!(".measure {name}: too many arguments")));
        }
        Ok(p)
    };
    let sources = |args: &[Token]| -> Result<Vec<String>> {
        if args.is_empty() {
            return Err(Error::parse(line, format!(".measure {name}: needs at least one supply")));
        }
        args.iter()
            .map(|t| word(t, line, "supply source name").map(|s| s.to_ascii_lowercase()))
            .collect()
    };
    let kind = match kind.to_ascii_lowercase().as_str() {
        "rms" => MeasureKind::Rms(single_probe(args)?),
        "pp" => MeasureKind::Pp(single_probe(args)?),
        "gain" => {
            let (input, used) = parse_probe(args, line)?;
            let output = single_probe(&args[used..])?;
            MeasureKind::Gain { input, output }
        }
        "avgpow" => MeasureKind::AvgPow(sources(args)?),
        "peakpow" => MeasureKind::PeakPow(sources(args)?),
        "hist" => {
            let (probe, used) = parse_probe(args, line)?;
            let nbins = match &args[used..] {
                [] => 20,
                [Token::Word(n)] => n.parse::<usize>().ok().filter(|&n| n >= 1).ok_or_else(|| {
                    Error::parse(line, format!(".measure {name}: bad bin count '{n}'"))
                })?,
                _ => return Err(Error::parse(line, format!(".measure {name}: too many arguments"))),
            };
            MeasureKind::Hist { probe, nbins }
        }
        _ => return Err(usage()),
    };
    Ok(MeasureSpec {
        name: name.clone(),
        kind,
    })
}

fn parse_directive(
    keyword: &str,
    args: &[Token],
    line: usize,
    ast: &mut NetlistAst,
) -> Result<Option<Directive>> {
    let arity = |n: usize, usage: &str| -> Result<Vec<f64>> {
        if args.len() != n {
            return Err(Error::parse(line, format!("usage: {usage}")));
        }
        args.iter()
            .map(|t| literal(&word(t, line, "number")?, line))
            .collect()
    };
    let directive = match keyword {
        "op" => {
            arity(0, ".op")?;
            Directive::Op
        }
        "dc" => {
            let usage = ".dc <src> <start> <stop> <step>";
            if args.len() != 4 {
                return Err(Error::parse(line, format!("usage: {usage}")));
            }
            let source = word(&args[0], line, "source name")?.to_ascii_lowercase();
            let nums = args[1..]
                .iter()
                .map(|t| literal(&word(t, line, "number")?, line))
                .collect::<Result<Vec<_>>>()?;
            if nums[2] == 0.0 {
                return Err(Error::parse(line, ".dc step must be non-zero"));
            }
            Directive::Dc {
                source,
                start: nums[0],
                stop: nums[1],
                step: nums[2],
            }
        }
        "tran" => {
            let usage = ".tran <tstep> <tstop> [method=be|trap]";
            let (nums, method) = match args {
                [a, b] => (vec![a, b], None),
                [a, b, Token::Assign(k, m)] if k == "method" => {
                    let method = match m.to_ascii_lowercase().as_str() {
                        "be" => IntegrationMethod::BackwardEuler,
                        "trap" => IntegrationMethod::Trapezoidal,
                        other => {
                            return Err(Error::parse(line, format!("unknown method '{other}'")))
                        }
                    };
                    (vec![a, b], Some(method))
                }
                _ => return Err(Error::parse(line, format!("usage: {usage}"))),
            };
            let tstep = literal(&word(nums[0], line, "tstep")?, line)?;
            let tstop = literal(&word(nums[1], line, "tstop")?, line)?;
            Directive::Tran {
                tstep,
                tstop,
                method,
            }
        }
        "param" => {
            if args.is_empty() {
                return Err(Error::parse(line, "usage: .param <name>=<value>"));
            }
            for tok in args {
                let Token::Assign(k, v) = tok else {
                    return Err(Error::parse(line, "usage: .param <name>=<value>"));
                };
                ast.params.insert(k.clone(), literal(v, line)?);
            }
            return Ok(None);
        }
        "measure" | "meas" => Directive::Measure(parse_measure(args, line)?),
        other => return Err(Error::parse(line, format!("unknown directive '.{other}'"))),
    };
    Ok(Some(directive))
}

fn check_unique(elements: &[ElementSpec], scope: &str) -> Result<()> {
    let mut seen = HashSet::new();
    for e in elements {
        if !seen.insert(e.name.to_ascii_lowercase()) {
            return Err(Error::parse(
                e.line,
                format!("duplicate element name '{}' in {scope}", e.name),
            ));
        }
    }
    Ok(())
}

/// Parses complete netlist text.
pub fn parse_netlist(text: &str) -> Result<NetlistAst> {
    let (title, lines) = logical_lines(text)?;
    let mut ast = NetlistAst {
        title,
        ..Default::default()
    };
    let mut open_subckt: Option<SubcktDef> = None;

    for Line { number, tokens } in lines {
        let first = match &tokens[0] {
            Token::Word(w) => w.clone(),
            _ => return Err(Error::parse(number, "line must start with a name or directive")),
        };
        if let Some(kw) = first.strip_prefix('.') {
            let kw = kw.to_ascii_lowercase();
            let args = &tokens[1..];
            match kw.as_str() {
                "end" => break,
                "subckt" => {
                    if open_subckt.is_some() {
                        return Err(Error::parse(number, "nested .subckt definitions are not supported"));
                    }
                    let words = args
                        .iter()
                        .map(|t| word(t, number, "subcircuit name or port"))
                        .collect::<Result<Vec<_>>>()?;
                    let Some((name, ports)) = words.split_first() else {
                        return Err(Error::parse(number, "usage: .subckt <name> <ports...>"));
                    };
                    if ports.is_empty() {
                        return Err(Error::parse(number, format!(".subckt {name}: needs at least one port")));
                    }
                    open_subckt = Some(SubcktDef {
                        name: name.to_ascii_lowercase(),
                        ports: ports.to_vec(),
                        elements: Vec::new(),
                        line: number,
                    });
                }
                "ends" => {
                    let Some(def) = open_subckt.take() else {
                        return Err(Error::parse(number, ".ends without .subckt"));
                    };
                    if let Some(Token::Word(n)) = args.first() {
                        if !n.eq_ignore_ascii_case(&def.name) {
                            return Err(Error::parse(
                                number,
                                format!(".ends {n} does not close .subckt {}", def.name),
                            ));
                        }
                    }
                    check_unique(&def.elements, &format!("subcircuit '{}'", def.name))?;
                    if ast.subckt_defs.contains_key(&def.name) {
                        return Err(Error::parse(number, format!("duplicate subcircuit '{}'", def.name)));
                    }
                    ast.subckt_defs.insert(def.name.clone(), def);
                }
                "model" => {
                    let (name, model) = parse_model(args, number)?;
                    if ast.models.insert(name.clone(), model).is_some() {
                        return Err(Error::parse(number, format!("duplicate model '{name}'")));
                    }
                }
                _ => {
                    if open_subckt.is_some() {
                        return Err(Error::parse(
                            number,
                            format!("directive .{kw} is not allowed inside .subckt"),
                        ));
                    }
                    if let Some(d) = parse_directive(&kw, args, number, &mut ast)? {
                        ast.directives.push(d);
                    }
                }
            }
            continue;
        }
        let element = parse_element(&tokens, number)?;
        match open_subckt.as_mut() {
            Some(def) => def.elements.push(element),
            None => ast.elements.push(element),
        }
    }
    if let Some(def) = open_subckt {
        return Err(Error::parse(def.line, format!(".subckt {} is never closed", def.name)));
    }
    check_unique(&ast.elements, "top level")?;

    // Instance arity against subcircuits defined anywhere in the file.
    let all = ast
        .elements
        .iter()
        .chain(ast.subckt_defs.values().flat_map(|d| d.elements.iter()));
    for e in all {
        if let ElementBody::Instance { subckt } = &e.body {
            if let Some(def) = ast.subckt_defs.get(subckt) {
                if def.ports.len() != e.nodes.len() {
                    return Err(Error::parse(
                        e.line,
                        format!(
                            "{}: subcircuit '{}' has {} ports, {} nodes given",
                            e.name,
                            subckt,
                            def.ports.len(),
                            e.nodes.len()
                        ),
                    ));
                }
            }
        }
    }
    Ok(ast)
}
