//! Attribute sets, policy trees and the policy text grammar.
//!
//! Grammar (`&` binds tighter than `|`):
//!
//! ```text
//! expr   := and ('|' and)*
//! and    := atom ('&' atom)*
//! atom   := '(' expr ')' | 'thresh' '(' k ';' expr (',' expr)* ')' | label
//! label  := Key:Value
//! ```

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use super::CryptoError;

fn is_label_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.' | ':' | '@' | '/')
}

/// Checks the `Key:Value` form: both parts non-empty, no whitespace.
pub fn validate_label(label: &str) -> Result<(), CryptoError> {
    let ok = label.chars().all(is_label_char)
        && matches!(label.split_once(':'), Some((k, v)) if !k.is_empty() && !v.is_empty());
    if ok {
        Ok(())
    } else {
        Err(CryptoError::InvalidAttribute(label.to_string()))
    }
}

/// Non-empty set of case-sensitive `Key:Value` attribute labels.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AttributeSet(BTreeSet<String>);

impl AttributeSet {
    pub fn new<I, S>(labels: I) -> Result<Self, CryptoError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let set: BTreeSet<String> = labels.into_iter().map(Into::into).collect();
        if set.is_empty() {
            return Err(CryptoError::EmptyAttributeSet);
        }
        for label in &set {
            validate_label(label)?;
        }
        Ok(Self(set))
    }

    /// Parses a comma separated list such as `Role:Researcher,Affiliation:UnivX`.
    pub fn parse_list(text: &str) -> Result<Self, CryptoError> {
        Self::new(text.split(',').map(str::trim).filter(|s| !s.is_empty()))
    }

    pub fn contains(&self, label: &str) -> bool {
        self.0.contains(label)
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Display for AttributeSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let labels: Vec<&str> = self.iter().collect();
        f.write_str(&labels.join(","))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GateKind {
    And,
    Or,
    Threshold(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum PolicyTree {
    Leaf(String),
    Gate { kind: GateKind, children: Vec<PolicyTree> },
}

impl PolicyTree {
    pub fn leaf(label: impl Into<String>) -> Self {
        Self::Leaf(label.into())
    }

    pub fn and(children: Vec<PolicyTree>) -> Self {
        Self::Gate {
            kind: GateKind::And,
            children,
        }
    }

    pub fn or(children: Vec<PolicyTree>) -> Self {
        Self::Gate {
            kind: GateKind::Or,
            children,
        }
    }

    pub fn threshold(k: usize, children: Vec<PolicyTree>) -> Self {
        Self::Gate {
            kind: GateKind::Threshold(k),
            children,
        }
    }

    /// Children that must be satisfied at a gate (`n` for AND, 1 for OR).
    pub fn required(kind: GateKind, n: usize) -> usize {
        match kind {
            GateKind::And => n,
            GateKind::Or => 1,
            GateKind::Threshold(k) => k,
        }
    }

    pub fn validate(&self) -> Result<(), CryptoError> {
        match self {
            Self::Leaf(label) => validate_label(label),
            Self::Gate { kind, children } => {
                let n = children.len();
                let ok = match kind {
                    GateKind::And | GateKind::Or => n >= 2,
                    GateKind::Threshold(k) => n >= 1 && (1..=n).contains(k),
                };
                if !ok || n > 255 {
                    return Err(CryptoError::InvalidPolicy(format!("gate {kind:?} with {n} children")));
                }
                children.iter().try_for_each(PolicyTree::validate)
            }
        }
    }

    /// Leaf labels in pre-order.
    pub fn leaves(&self) -> Vec<&str> {
        let mut out = Vec::new();
        fn walk<'a>(t: &'a PolicyTree, out: &mut Vec<&'a str>) {
            match t {
                PolicyTree::Leaf(l) => out.push(l),
                PolicyTree::Gate { children, .. } => children.iter().for_each(|c| walk(c, out)),
            }
        }
        walk(self, &mut out);
        out
    }

    pub fn parse(text: &str) -> Result<Self, CryptoError> {
        let tokens = tokenize(text)?;
        let mut p = Parser { tokens, pos: 0 };
        let tree = p.expr()?;
        if p.pos != p.tokens.len() {
            return Err(CryptoError::InvalidPolicy(format!(
                "unexpected trailing input in `{text}`"
            )));
        }
        tree.validate()?;
        Ok(tree)
    }
}

impl FromStr for PolicyTree {
    type Err = CryptoError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse(s)
    }
}

impl fmt::Display for PolicyTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Leaf(l) => f.write_str(l),
            Self::Gate { kind, children } => {
                let sep = match kind {
                    GateKind::And => " & ",
                    GateKind::Or => " | ",
                    GateKind::Threshold(k) => {
                        write!(f, "thresh({k}; ")?;
                        for (i, c) in children.iter().enumerate() {
                            if i > 0 {
                                f.write_str(", ")?;
                            }
                            write!(f, "{c}")?;
                        }
                        return f.write_str(")");
                    }
                };
                f.write_str("(")?;
                for (i, c) in children.iter().enumerate() {
                    if i > 0 {
                        f.write_str(sep)?;
                    }
                    write!(f, "{c}")?;
                }
                f.write_str(")")
            }
        }
    }
}

/// True iff the attributes satisfy the policy.
pub fn satisfies(policy: &PolicyTree, attrs: &AttributeSet) -> bool {
    match policy {
        PolicyTree::Leaf(label) => attrs.contains(label),
        PolicyTree::Gate { kind, children } => {
            let need = PolicyTree::required(*kind, children.len());
            let mut have = 0;
            for c in children {
                if satisfies(c, attrs) {
                    have += 1;
                    if have >= need {
                        return true;
                    }
                }
            }
            false
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Open,
    Close,
    And,
    Or,
    Comma,
    Semi,
    Word(String),
}

fn tokenize(text: &str) -> Result<Vec<Token>, CryptoError> {
    let mut out = Vec::new();
    let mut chars = text.char_indices().peekable();
    while let Some(&(i, c)) = chars.peek() {
        let tok = match c {
            c if c.is_whitespace() => {
                chars.next();
                continue;
            }
            '(' => Token::Open,
            ')' => Token::Close,
            '&' => Token::And,
            '|' => Token::Or,
            ',' => Token::Comma,
            ';' => Token::Semi,
            c if is_label_char(c) => {
                let mut end = i;
                while let Some(&(j, c)) = chars.peek() {
                    if !is_label_char(c) {
                        break;
                    }
                    end = j + c.len_utf8();
                    chars.next();
                }
                out.push(Token::Word(text[i..end].to_string()));
                continue;
            }
            other => return Err(CryptoError::InvalidPolicy(format!("unexpected character `{other}`"))),
        };
        chars.next();
        out.push(tok);
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn expect(&mut self, tok: Token) -> Result<(), CryptoError> {
        if self.peek() == Some(&tok) {
            self.pos += 1;
            Ok(())
        } else {
            Err(CryptoError::InvalidPolicy(format!(
                "expected {tok:?} at token {}",
                self.pos
            )))
        }
    }

    fn expr(&mut self) -> Result<PolicyTree, CryptoError> {
        let mut parts = vec![self.and()?];
        while self.peek() == Some(&Token::Or) {
            self.pos += 1;
            parts.push(self.and()?);
        }
        Ok(if parts.len() == 1 {
            parts.pop().unwrap()
        } else {
            PolicyTree::or(parts)
        })
    }

    fn and(&mut self) -> Result<PolicyTree, CryptoError> {
        let mut parts = vec![self.atom()?];
        while self.peek() == Some(&Token::And) {
            self.pos += 1;
            parts.push(self.atom()?);
        }
        Ok(if parts.len() == 1 {
            parts.pop().unwrap()
        } else {
            PolicyTree::and(parts)
        })
    }

    fn atom(&mut self) -> Result<PolicyTree, CryptoError> {
        match self.peek().cloned() {
            Some(Token::Open) => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(Token::Close)?;
                Ok(e)
            }
            Some(Token::Word(w)) if w == "thresh" && self.tokens.get(self.pos + 1) == Some(&Token::Open) => {
                self.pos += 2;
                let k = match self.peek() {
                    Some(Token::Word(n)) => n
                        .parse::<usize>()
                        .map_err(|_| CryptoError::InvalidPolicy(format!("bad threshold `{n}`")))?,
                    _ => return Err(CryptoError::InvalidPolicy("missing threshold".into())),
                };
                self.pos += 1;
                self.expect(Token::Semi)?;
                let mut children = vec![self.expr()?];
                while self.peek() == Some(&Token::Comma) {
                    self.pos += 1;
                    children.push(self.expr()?);
                }
                self.expect(Token::Close)?;
                Ok(PolicyTree::threshold(k, children))
            }
            Some(Token::Word(w)) => {
                self.pos += 1;
                validate_label(&w)?;
                Ok(PolicyTree::Leaf(w))
            }
            other => Err(CryptoError::InvalidPolicy(format!("unexpected token {other:?}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SCENARIO: &str = "(Role:Researcher & (Affiliation:UnivX | Region:Europe))";

    fn attrs(list: &str) -> AttributeSet {
        AttributeSet::parse_list(list).unwrap()
    }

    #[test]
    fn scenario_policy() {
        let p = PolicyTree::parse(SCENARIO).unwrap();
        assert!(satisfies(&p, &attrs("Role:Researcher,Affiliation:UnivX")));
        assert!(!satisfies(&p, &attrs("Role:Student,Region:Europe")));
        assert!(satisfies(&p, &attrs("Role:Researcher,Region:Europe")));
        assert!(!satisfies(&p, &attrs("Role:researcher,Region:Europe")));
    }

    #[test]
    fn threshold_two_of_three_truth_table() {
        let p = PolicyTree::parse("thresh(2; K:A, K:B, K:C)").unwrap();
        let names = ["K:A", "K:B", "K:C"];
        for mask in 1u32..8 {
            let set = AttributeSet::new((0..3).filter(|i| mask & (1 << i) != 0).map(|i| names[i])).unwrap();
            assert_eq!(satisfies(&p, &set), mask.count_ones() >= 2, "mask {mask:03b}");
        }
        assert!(satisfies(&p, &attrs("K:A,K:C")));
    }

    #[test]
    fn display_parse_roundtrip() {
        for text in [
            SCENARIO,
            "thresh(2; A:a, (B:b & C:c), thresh(1; D:d))",
            "A:a | B:b & C:c",
            "A:a",
        ] {
            let p = PolicyTree::parse(text).unwrap();
            assert_eq!(PolicyTree::parse(&p.to_string()).unwrap(), p);
        }
        let p = PolicyTree::parse("A:a | B:b & C:c").unwrap();
        assert_eq!(p.to_string(), "(A:a | (B:b & C:c))");
    }

    #[test]
    fn malformed_policies() {
        for bad in [
            "",
            "(A:a",
            "A:a &",
            "thresh(0; A:a)",
            "thresh(3; A:a, B:b)",
            "thresh(x; A:a)",
            "A:a B:b",
            "noColon",
            "A:a # B:b",
        ] {
            assert!(PolicyTree::parse(bad).is_err(), "{bad}");
        }
        assert!(PolicyTree::and(vec![PolicyTree::leaf("A:a")]).validate().is_err());
    }

    #[test]
    fn attribute_sets() {
        assert_eq!(
            AttributeSet::new(Vec::<String>::new()),
            Err(CryptoError::EmptyAttributeSet)
        );
        assert!(AttributeSet::new(["Role: Researcher"]).is_err());
        assert_eq!(attrs("B:b, A:a").to_string(), "A:a,B:b");
    }
}
