use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use super::{LinkDef, Peer, Preset, TopologySpec};
use crate::{
    cost::{self, Cost},
    graph::NodeId,
};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ParseErrorKind {
    Syntax(String),
    UnknownKeyword(String),
    DuplicatePeer(String),
    UnknownPeerInLink(String),
    NonPositiveWeight(String),
    PresetCustomMismatch(String),
    SelfLoop(String),
    DuplicateLink(String, String),
    InvalidFanout(u32),
    MissingTopology,
}

impl ParseErrorKind {
    /// Stable error class name, used by diagnostics and the parser corpus.
    pub fn class(&self) -> &'static str {
        match self {
            ParseErrorKind::Syntax(_) => "SyntaxError",
            ParseErrorKind::UnknownKeyword(_) => "UnknownKeyword",
            ParseErrorKind::DuplicatePeer(_) => "DuplicatePeer",
            ParseErrorKind::UnknownPeerInLink(_) => "UnknownPeerInLink",
            ParseErrorKind::NonPositiveWeight(_) => "NonPositiveWeight",
            ParseErrorKind::PresetCustomMismatch(_) => "PresetCustomMismatch",
            ParseErrorKind::SelfLoop(_) => "SelfLoop",
            ParseErrorKind::DuplicateLink(..) => "DuplicateLink",
            ParseErrorKind::InvalidFanout(_) => "InvalidFanout",
            ParseErrorKind::MissingTopology => "MissingTopology",
        }
    }

    fn detail(&self) -> String {
        match self {
            ParseErrorKind::Syntax(m) => m.clone(),
            ParseErrorKind::UnknownKeyword(w) => format!("unknown keyword `{w}`"),
            ParseErrorKind::DuplicatePeer(p) => format!("peer `{p}` declared twice"),
            ParseErrorKind::UnknownPeerInLink(p) => format!("link references undeclared peer `{p}`"),
            ParseErrorKind::NonPositiveWeight(w) => format!("link weight must be positive, got `{w}`"),
            ParseErrorKind::PresetCustomMismatch(m) => m.clone(),
            ParseErrorKind::SelfLoop(p) => format!("link from `{p}` to itself"),
            ParseErrorKind::DuplicateLink(a, b) => format!("link `{a} -> {b}` declared twice"),
            ParseErrorKind::InvalidFanout(k) => {
                format!("random fanout {k} must be between 1 and the number of peers minus one")
            }
            ParseErrorKind::MissingTopology => "missing `topology` statement".to_owned(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
#[error("{}:{}: {}: {}", .line, .column, .kind.class(), .kind.detail())]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub kind: ParseErrorKind,
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum Tok {
    Word(String),
    Semi,
    Comma,
    LBrace,
    RBrace,
    LParen,
    RParen,
    Eq,
    Arrow,
}

#[derive(Clone, Debug)]
struct Token {
    tok: Tok,
    line: usize,
    column: usize,
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || matches!(c, '_' | '.' | ':' | '-' | '/')
}

fn lex(text: &str) -> Result<(Vec<Token>, (usize, usize)), ParseError> {
    let chars: Vec<char> = text.chars().collect();
    let mut tokens = Vec::new();
    let (mut line, mut column) = (1usize, 1usize);
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let next = chars.get(i + 1).copied();
        let (tl, tc) = (line, column);
        if c == '\n' {
            line += 1;
            column = 1;
            i += 1;
            continue;
        }
        if c.is_whitespace() {
            column += 1;
            i += 1;
            continue;
        }
        if c == '/' && next == Some('/') {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
            continue;
        }
        let single = match c {
            ';' => Some(Tok::Semi),
            ',' => Some(Tok::Comma),
            '{' => Some(Tok::LBrace),
            '}' => Some(Tok::RBrace),
            '(' => Some(Tok::LParen),
            ')' => Some(Tok::RParen),
            '=' => Some(Tok::Eq),
            _ => None,
        };
        if let Some(tok) = single {
            tokens.push(Token { tok, line: tl, column: tc });
            i += 1;
            column += 1;
            continue;
        }
        if c == '-' && next == Some('>') {
            tokens.push(Token { tok: Tok::Arrow, line: tl, column: tc });
            i += 2;
            column += 2;
            continue;
        }
        if is_word_char(c) {
            let mut word = String::new();
            while i < chars.len() {
                let c = chars[i];
                let next = chars.get(i + 1).copied();
                if !is_word_char(c) || (c == '-' && next == Some('>')) || (c == '/' && next == Some('/')) {
                    break;
                }
                word.push(c);
                i += 1;
                column += 1;
            }
            tokens.push(Token { tok: Tok::Word(word), line: tl, column: tc });
            continue;
        }
        return Err(ParseError {
            line: tl,
            column: tc,
            kind: ParseErrorKind::Syntax(format!("unexpected character `{c}`")),
        });
    }
    Ok((tokens, (line, column)))
}

fn is_identifier(word: &str) -> bool {
    let mut chars = word.chars();
    matches!(chars.next(), Some(c) if c.is_alphabetic() || c == '_')
        && chars.all(|c| c.is_alphanumeric() || c == '_' || c == '-')
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    eof: (usize, usize),
}

struct Located<T> {
    value: T,
    line: usize,
    column: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn here(&self) -> (usize, usize) {
        self.peek().map_or(self.eof, |t| (t.line, t.column))
    }

    fn err<T>(&self, kind: ParseErrorKind) -> Result<T, ParseError> {
        let (line, column) = self.here();
        Err(ParseError { line, column, kind })
    }

    fn describe(&self) -> String {
        match self.peek().map(|t| &t.tok) {
            None => "end of input".into(),
            Some(Tok::Word(w)) => format!("`{w}`"),
            Some(Tok::Semi) => "`;`".into(),
            Some(Tok::Comma) => "`,`".into(),
            Some(Tok::LBrace) => "`{`".into(),
            Some(Tok::RBrace) => "`}`".into(),
            Some(Tok::LParen) => "`(`".into(),
            Some(Tok::RParen) => "`)`".into(),
            Some(Tok::Eq) => "`=`".into(),
            Some(Tok::Arrow) => "`->`".into(),
        }
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<(), ParseError> {
        if self.peek().map(|t| &t.tok) == Some(&tok) {
            self.pos += 1;
            Ok(())
        } else {
            let found = self.describe();
            self.err(ParseErrorKind::Syntax(format!("expected {what}, found {found}")))
        }
    }

    fn eat(&mut self, tok: &Tok) -> bool {
        if self.peek().map(|t| &t.tok) == Some(tok) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn word(&mut self, what: &str) -> Result<Located<String>, ParseError> {
        match self.peek() {
            Some(Token { tok: Tok::Word(w), line, column }) => {
                let out = Located { value: w.clone(), line: *line, column: *column };
                self.pos += 1;
                Ok(out)
            }
            _ => {
                let found = self.describe();
                self.err(ParseErrorKind::Syntax(format!("expected {what}, found {found}")))
            }
        }
    }

    fn ident(&mut self, what: &str) -> Result<Located<String>, ParseError> {
        let w = self.word(what)?;
        if !is_identifier(&w.value) {
            return Err(ParseError {
                line: w.line,
                column: w.column,
                kind: ParseErrorKind::Syntax(format!("`{}` is not a valid {what}", w.value)),
            });
        }
        Ok(w)
    }

    /// Statement terminator: `;`, optional only at end of input.
    fn terminator(&mut self) -> Result<(), ParseError> {
        if self.peek().is_none() {
            return Ok(());
        }
        self.expect(Tok::Semi, "`;`")
    }
}

struct RawLink {
    from: Located<String>,
    to: Located<String>,
    weight: Cost,
}

/// Parses TopLink source text into a validated [`TopologySpec`].
pub fn parse_toplink(text: &str) -> Result<TopologySpec, ParseError> {
    let (tokens, eof) = lex(text)?;
    let mut p = Parser { tokens, pos: 0, eof };

    let mut names: BTreeMap<&'static str, String> = BTreeMap::new();
    let mut preset: Option<Located<Preset>> = None;
    let mut peers: Vec<Peer> = Vec::new();
    let mut seen_peers: BTreeSet<String> = BTreeSet::new();
    let mut nodes_seen = false;
    let mut links: Option<(usize, usize, Vec<RawLink>)> = None;
    let mut leaders: Option<bool> = None;

    while let Some(tok) = p.peek().cloned() {
        let Tok::Word(kw) = &tok.tok else {
            let found = p.describe();
            return p.err(ParseErrorKind::Syntax(format!("expected a statement, found {found}")));
        };
        let duplicate = || ParseError {
            line: tok.line,
            column: tok.column,
            kind: ParseErrorKind::Syntax(format!("duplicate `{kw}` statement")),
        };
        match kw.as_str() {
            "app" | "actor" | "component" => {
                let key: &'static str = match kw.as_str() {
                    "app" => "app",
                    "actor" => "actor",
                    _ => "component",
                };
                p.pos += 1;
                let name = p.ident("name")?;
                if names.insert(key, name.value).is_some() {
                    return Err(duplicate());
                }
                p.terminator()?;
            }
            "topology" => {
                p.pos += 1;
                if preset.is_some() {
                    return Err(duplicate());
                }
                let w = p.word("topology preset")?;
                let value = match w.value.as_str() {
                    "ring" => Preset::Ring,
                    "custom" => Preset::Custom,
                    "random" => {
                        let paren = p.eat(&Tok::LParen);
                        let k = p.word("fanout")?;
                        let fanout: u32 = k.value.parse().map_err(|_| ParseError {
                            line: k.line,
                            column: k.column,
                            kind: ParseErrorKind::Syntax(format!("fanout `{}` is not a positive integer", k.value)),
                        })?;
                        if paren {
                            p.expect(Tok::RParen, "`)`")?;
                        }
                        Preset::Random { fanout }
                    }
                    other => {
                        return Err(ParseError {
                            line: w.line,
                            column: w.column,
                            kind: ParseErrorKind::UnknownKeyword(other.to_owned()),
                        })
                    }
                };
                preset = Some(Located { value, line: tok.line, column: tok.column });
                p.terminator()?;
            }
            "nodes" => {
                p.pos += 1;
                if nodes_seen {
                    return Err(duplicate());
                }
                nodes_seen = true;
                p.expect(Tok::LBrace, "`{`")?;
                while !p.eat(&Tok::RBrace) {
                    let name = p.ident("peer name")?;
                    let host = if p.eat(&Tok::Eq) { Some(p.word("host")?.value) } else { None };
                    if !seen_peers.insert(name.value.clone()) {
                        return Err(ParseError {
                            line: name.line,
                            column: name.column,
                            kind: ParseErrorKind::DuplicatePeer(name.value),
                        });
                    }
                    peers.push(Peer { name: NodeId::new(name.value), host });
                    if !p.eat(&Tok::Comma) {
                        p.expect(Tok::RBrace, "`,` or `}`")?;
                        break;
                    }
                }
                p.eat(&Tok::Semi);
            }
            "links" => {
                p.pos += 1;
                if links.is_some() {
                    return Err(duplicate());
                }
                p.expect(Tok::LBrace, "`{`")?;
                let mut raw = Vec::new();
                while !p.eat(&Tok::RBrace) {
                    let from = p.ident("peer name")?;
                    p.expect(Tok::Arrow, "`->`")?;
                    let to = p.ident("peer name")?;
                    let mut weight = cost::int(1);
                    if matches!(p.peek(), Some(Token { tok: Tok::Word(w), .. }) if w == "weight") {
                        p.pos += 1;
                        let w = p.word("weight value")?;
                        weight = cost::parse_cost(&w.value).ok_or_else(|| ParseError {
                            line: w.line,
                            column: w.column,
                            kind: ParseErrorKind::Syntax(format!("`{}` is not a number", w.value)),
                        })?;
                        if !cost::is_positive(&weight) {
                            return Err(ParseError {
                                line: w.line,
                                column: w.column,
                                kind: ParseErrorKind::NonPositiveWeight(w.value),
                            });
                        }
                    }
                    raw.push(RawLink { from, to, weight });
                    if !p.eat(&Tok::Semi) {
                        p.expect(Tok::RBrace, "`;` or `}`")?;
                        break;
                    }
                }
                p.eat(&Tok::Semi);
                links = Some((tok.line, tok.column, raw));
            }
            "leaders" => {
                p.pos += 1;
                if leaders.is_some() {
                    return Err(duplicate());
                }
                let w = p.word("`on` or `off`")?;
                leaders = Some(match w.value.as_str() {
                    "on" => true,
                    "off" => false,
                    other => {
                        return Err(ParseError {
                            line: w.line,
                            column: w.column,
                            kind: ParseErrorKind::UnknownKeyword(other.to_owned()),
                        })
                    }
                });
                p.terminator()?;
            }
            other => {
                return p.err(ParseErrorKind::UnknownKeyword(other.to_owned()));
            }
        }
    }

    let Some(preset) = preset else {
        return Err(ParseError { line: eof.0, column: eof.1, kind: ParseErrorKind::MissingTopology });
    };

    let (links_line, links_column, raw_links) = links.unwrap_or((0, 0, Vec::new()));
    match preset.value {
        Preset::Custom if raw_links.is_empty() => {
            let (line, column) = if links_line > 0 { (links_line, links_column) } else { (preset.line, preset.column) };
            return Err(ParseError {
                line,
                column,
                kind: ParseErrorKind::PresetCustomMismatch("custom topology requires at least one link".into()),
            });
        }
        Preset::Ring | Preset::Random { .. } if !raw_links.is_empty() => {
            return Err(ParseError {
                line: links_line,
                column: links_column,
                kind: ParseErrorKind::PresetCustomMismatch(format!(
                    "links are only allowed with a custom topology, not `{}`",
                    preset.value
                )),
            });
        }
        Preset::Random { fanout } if fanout == 0 || fanout as usize >= peers.len().max(1) => {
            return Err(ParseError {
                line: preset.line,
                column: preset.column,
                kind: ParseErrorKind::InvalidFanout(fanout),
            });
        }
        _ => {}
    }

    let mut pairs = BTreeSet::new();
    let mut links_out = Vec::with_capacity(raw_links.len());
    for link in raw_links {
        for end in [&link.from, &link.to] {
            if !seen_peers.contains(&end.value) {
                return Err(ParseError {
                    line: end.line,
                    column: end.column,
                    kind: ParseErrorKind::UnknownPeerInLink(end.value.clone()),
                });
            }
        }
        if link.from.value == link.to.value {
            return Err(ParseError {
                line: link.from.line,
                column: link.from.column,
                kind: ParseErrorKind::SelfLoop(link.from.value),
            });
        }
        if !pairs.insert((link.from.value.clone(), link.to.value.clone())) {
            return Err(ParseError {
                line: link.from.line,
                column: link.from.column,
                kind: ParseErrorKind::DuplicateLink(link.from.value, link.to.value),
            });
        }
        links_out.push(LinkDef {
            from: NodeId::new(link.from.value),
            to: NodeId::new(link.to.value),
            weight: link.weight,
        });
    }

    Ok(TopologySpec {
        app_name: names.remove("app").unwrap_or_default(),
        actor_name: names.remove("actor").unwrap_or_default(),
        component_name: names.remove("component").unwrap_or_default(),
        preset: preset.value,
        peers,
        links: links_out,
        leaders_enabled: leaders.unwrap_or(false),
    })
}
