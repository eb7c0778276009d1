//! Recursive-descent parser for the query dialect.
//!
//! ```sql
//! select * from ipfs.`/ipfs/<cid>#csv`;
//! select a, count(*) from ipfs.`/ipfs/<cid>/table.json` where b > 5 group by a limit 10;
//! create table ipfs.`name` as select ...;
//! create temporary table ipfs.`name` as select ...;
//! ```
//!
//! Keywords are case-insensitive; the table path is a backquoted literal.
//! Every input either parses or yields an error with a byte position.

use crate::chunkstore::ContentId;
use crate::error::{Error, Result};
use crate::executor::{AggFn, CmpOp, Comparison, DataFormat, Predicate, Value};

#[derive(Clone, Debug, PartialEq)]
pub struct IpfsPath {
    pub top_cid: ContentId,
    pub format: DataFormat,
}

/// Table reference: an explicit `/ipfs/...` path or a catalog name.
#[derive(Clone, Debug, PartialEq)]
pub enum SourceRef {
    Path(IpfsPath),
    Named(String),
}

#[derive(Clone, Debug, PartialEq)]
pub enum ProjItem {
    Column(String),
    Aggregate(AggFn),
}

#[derive(Clone, Debug, PartialEq)]
pub enum Projection {
    Star,
    Items(Vec<ProjItem>),
}

#[derive(Clone, Debug, PartialEq)]
pub enum QueryKind {
    Select,
    CreateTableAs { name: String },
    CreateTempTableAs { name: String },
}

#[derive(Clone, Debug, PartialEq)]
pub struct QueryAst {
    pub kind: QueryKind,
    pub projection: Projection,
    pub source: SourceRef,
    pub predicate: Option<Predicate>,
    pub group_by: Option<String>,
    pub limit: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
enum Token {
    Ident(String),
    Number(String),
    Str(String),
    Backquoted(String),
    Star,
    Comma,
    Dot,
    LParen,
    RParen,
    Op(CmpOp),
    Semicolon,
}

struct Lexer<'a> {
    bytes: &'a [u8],
    pos: usize,
}

fn syntax(position: usize, message: impl Into<String>) -> Error {
    Error::Syntax {
        position,
        message: message.into(),
    }
}

impl<'a> Lexer<'a> {
    fn new(text: &'a str) -> Self {
        Lexer {
            bytes: text.as_bytes(),
            pos: 0,
        }
    }

    fn tokens(mut self) -> Result<Vec<(Token, usize)>> {
        let mut out = Vec::new();
        while let Some(token) = self.next_token()? {
            out.push(token);
        }
        Ok(out)
    }

    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    fn next_token(&mut self) -> Result<Option<(Token, usize)>> {
        while matches!(self.peek(), Some(b) if b.is_ascii_whitespace()) {
            self.pos += 1;
        }
        let start = self.pos;
        let Some(byte) = self.peek() else {
            return Ok(None);
        };
        let token = match byte {
            b'*' => {
                self.pos += 1;
                Token::Star
            }
            b',' => {
                self.pos += 1;
                Token::Comma
            }
            b'.' => {
                self.pos += 1;
                Token::Dot
            }
            b'(' => {
                self.pos += 1;
                Token::LParen
            }
            b')' => {
                self.pos += 1;
                Token::RParen
            }
            b';' => {
                self.pos += 1;
                Token::Semicolon
            }
            b'=' => {
                self.pos += 1;
                Token::Op(CmpOp::Eq)
            }
            b'!' => {
                self.pos += 1;
                if self.peek() == Some(b'=') {
                    self.pos += 1;
                    Token::Op(CmpOp::Ne)
                } else {
                    return Err(syntax(start, "expected `!=`"));
                }
            }
            b'<' => {
                self.pos += 1;
                match self.peek() {
                    Some(b'=') => {
                        self.pos += 1;
                        Token::Op(CmpOp::Le)
                    }
                    Some(b'>') => {
                        self.pos += 1;
                        Token::Op(CmpOp::Ne)
                    }
                    _ => Token::Op(CmpOp::Lt),
                }
            }
            b'>' => {
                self.pos += 1;
                if self.peek() == Some(b'=') {
                    self.pos += 1;
                    Token::Op(CmpOp::Ge)
                } else {
                    Token::Op(CmpOp::Gt)
                }
            }
            b'`' => {
                self.pos += 1;
                let literal_start = self.pos;
                while let Some(b) = self.peek() {
                    if b == b'`' {
                        break;
                    }
                    self.pos += 1;
                }
                if self.peek() != Some(b'`') {
                    return Err(syntax(start, "unterminated backquoted literal"));
                }
                let text = std::str::from_utf8(&self.bytes[literal_start..self.pos])
                    .map_err(|_| syntax(start, "invalid utf-8 in literal"))?
                    .to_string();
                self.pos += 1;
                Token::Backquoted(text)
            }
            b'\'' => {
                self.pos += 1;
                let mut text = String::new();
                loop {
                    match self.peek() {
                        Some(b'\'') => {
                            self.pos += 1;
                            if self.peek() == Some(b'\'') {
                                text.push('\'');
                                self.pos += 1;
                            } else {
                                break;
                            }
                        }
                        Some(b) => {
                            text.push(b as char);
                            self.pos += 1;
                        }
                        None => return Err(syntax(start, "unterminated string literal")),
                    }
                }
                Token::Str(text)
            }
            b if b.is_ascii_digit() || b == b'-' || b == b'+' => {
                self.pos += 1;
                while matches!(self.peek(), Some(c) if c.is_ascii_digit() || c == b'.' || c == b'e' || c == b'E' || c == b'-' || c == b'+')
                {
                    // Sign characters are only valid right after an exponent.
                    let c = self.peek().unwrap();
                    if (c == b'-' || c == b'+')
                        && !matches!(self.bytes.get(self.pos - 1), Some(b'e') | Some(b'E'))
                    {
                        break;
                    }
                    self.pos += 1;
                }
                let text = std::str::from_utf8(&self.bytes[start..self.pos])
                    .unwrap()
                    .to_string();
                Token::Number(text)
            }
            b if b.is_ascii_alphabetic() || b == b'_' => {
                self.pos += 1;
                while matches!(self.peek(), Some(c) if c.is_ascii_alphanumeric() || c == b'_') {
                    self.pos += 1;
                }
                let text = std::str::from_utf8(&self.bytes[start..self.pos])
                    .unwrap()
                    .to_string();
                Token::Ident(text)
            }
            other => {
                return Err(syntax(
                    start,
                    format!("unexpected character {:?}", other as char),
                ))
            }
        };
        Ok(Some((token, start)))
    }
}

struct Parser {
    tokens: Vec<(Token, usize)>,
    index: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.index).map(|(t, _)| t)
    }

    fn position(&self) -> usize {
        self.tokens
            .get(self.index)
            .map(|(_, p)| *p)
            .unwrap_or(self.end)
    }

    fn advance(&mut self) -> Option<Token> {
        let token = self.tokens.get(self.index).map(|(t, _)| t.clone());
        if token.is_some() {
            self.index += 1;
        }
        token
    }

    fn keyword(&mut self, word: &str) -> bool {
        if let Some(Token::Ident(text)) = self.peek() {
            if text.eq_ignore_ascii_case(word) {
                self.index += 1;
                return true;
            }
        }
        false
    }

    fn expect_keyword(&mut self, word: &str) -> Result<()> {
        if self.keyword(word) {
            Ok(())
        } else {
            Err(syntax(self.position(), format!("expected `{word}`")))
        }
    }

    fn expect(&mut self, token: Token, what: &str) -> Result<()> {
        if self.peek() == Some(&token) {
            self.index += 1;
            Ok(())
        } else {
            Err(syntax(self.position(), format!("expected {what}")))
        }
    }

    fn ident(&mut self, what: &str) -> Result<String> {
        match self.advance() {
            Some(Token::Ident(text)) => Ok(text),
            _ => {
                self.index = self.index.saturating_sub(1);
                Err(syntax(self.position(), format!("expected {what}")))
            }
        }
    }

    fn parse_query(&mut self) -> Result<QueryAst> {
        let ast = if self.keyword("create") {
            let temporary = self.keyword("temporary") || self.keyword("temp");
            self.expect_keyword("table")?;
            let name = self.parse_target_name()?;
            self.expect_keyword("as")?;
            let inner = self.parse_select()?;
            QueryAst {
                kind: if temporary {
                    QueryKind::CreateTempTableAs { name }
                } else {
                    QueryKind::CreateTableAs { name }
                },
                ..inner
            }
        } else {
            self.parse_select()?
        };
        if self.peek() == Some(&Token::Semicolon) {
            self.index += 1;
        }
        if let Some(_token) = self.peek() {
            return Err(syntax(self.position(), "trailing input after query"));
        }
        Ok(ast)
    }

    fn parse_target_name(&mut self) -> Result<String> {
        // Targets are written the same way as sources: ipfs.`name`.
        let position = self.position();
        let prefix = self.ident("`ipfs` table prefix")?;
        if !prefix.eq_ignore_ascii_case("ipfs") {
            return Err(syntax(position, "table targets live under `ipfs.`"));
        }
        self.expect(Token::Dot, "`.`")?;
        match self.advance() {
            Some(Token::Backquoted(name)) if !name.is_empty() => Ok(name),
            Some(Token::Ident(name)) => Ok(name),
            _ => Err(syntax(self.position(), "expected a table name")),
        }
    }

    fn parse_select(&mut self) -> Result<QueryAst> {
        self.expect_keyword("select")?;
        let projection = self.parse_projection()?;
        self.expect_keyword("from")?;
        let source = self.parse_source()?;
        let predicate = if self.keyword("where") {
            Some(self.parse_predicate()?)
        } else {
            None
        };
        let group_by = if self.keyword("group") {
            self.expect_keyword("by")?;
            Some(self.ident("grouping column")?)
        } else {
            None
        };
        let limit = if self.keyword("limit") {
            let position = self.position();
            match self.advance() {
                Some(Token::Number(text)) => Some(
                    text.parse::<usize>()
                        .map_err(|_| syntax(position, "limit must be a nonnegative integer"))?,
                ),
                _ => return Err(syntax(position, "expected a row count after limit")),
            }
        } else {
            None
        };
        Ok(QueryAst {
            kind: QueryKind::Select,
            projection,
            source,
            predicate,
            group_by,
            limit,
        })
    }

    fn parse_projection(&mut self) -> Result<Projection> {
        if self.peek() == Some(&Token::Star) {
            self.index += 1;
            return Ok(Projection::Star);
        }
        let mut items = vec![self.parse_proj_item()?];
        while self.peek() == Some(&Token::Comma) {
            self.index += 1;
            items.push(self.parse_proj_item()?);
        }
        Ok(Projection::Items(items))
    }

    fn parse_proj_item(&mut self) -> Result<ProjItem> {
        let position = self.position();
        let name = self.ident("column or aggregate")?;
        if self.peek() != Some(&Token::LParen) {
            return Ok(ProjItem::Column(name));
        }
        self.index += 1;
        let lower = name.to_ascii_lowercase();
        let agg = match lower.as_str() {
            "count" => {
                if self.peek() == Some(&Token::Star) {
                    self.index += 1;
                    AggFn::CountStar
                } else {
                    AggFn::Count(self.ident("column inside count()")?)
                }
            }
            "sum" => AggFn::Sum(self.ident("column inside sum()")?),
            "min" => AggFn::Min(self.ident("column inside min()")?),
            "max" => AggFn::Max(self.ident("column inside max()")?),
            other => {
                return Err(syntax(
                    position,
                    format!("unknown aggregate function {other:?}"),
                ))
            }
        };
        self.expect(Token::RParen, "`)`")?;
        Ok(ProjItem::Aggregate(agg))
    }

    fn parse_source(&mut self) -> Result<SourceRef> {
        let position = self.position();
        let prefix = self.ident("`ipfs` table prefix")?;
        if !prefix.eq_ignore_ascii_case("ipfs") {
            return Err(syntax(
                position,
                "table sources must be ipfs.`/ipfs/<cid>#<format>`",
            ));
        }
        self.expect(Token::Dot, "`.`")?;
        let literal_position = self.position();
        match self.advance() {
            Some(Token::Backquoted(text)) => parse_ipfs_path(&text, literal_position),
            Some(Token::Ident(name)) => Ok(SourceRef::Named(name)),
            _ => Err(syntax(literal_position, "expected a backquoted table path")),
        }
    }

    fn parse_predicate(&mut self) -> Result<Predicate> {
        let mut clauses = vec![self.parse_comparison()?];
        while self.keyword("and") {
            clauses.push(self.parse_comparison()?);
        }
        Ok(Predicate { clauses })
    }

    fn parse_comparison(&mut self) -> Result<Comparison> {
        let column = self.ident("column")?;
        let position = self.position();
        let op = match self.advance() {
            Some(Token::Op(op)) => op,
            _ => return Err(syntax(position, "expected a comparison operator")),
        };
        let literal = self.parse_literal()?;
        Ok(Comparison {
            column,
            op,
            literal,
        })
    }

    fn parse_literal(&mut self) -> Result<Value> {
        let position = self.position();
        match self.advance() {
            Some(Token::Number(text)) => {
                if let Ok(i) = text.parse::<i64>() {
                    Ok(Value::Int(i))
                } else {
                    text.parse::<f64>()
                        .map(Value::Float)
                        .map_err(|_| syntax(position, format!("bad number {text:?}")))
                }
            }
            Some(Token::Str(text)) => Ok(Value::Text(text)),
            Some(Token::Ident(word)) if word.eq_ignore_ascii_case("true") => {
                Ok(Value::Bool(true))
            }
            Some(Token::Ident(word)) if word.eq_ignore_ascii_case("false") => {
                Ok(Value::Bool(false))
            }
            Some(Token::Ident(word)) if word.eq_ignore_ascii_case("null") => Ok(Value::Null),
            _ => Err(syntax(position, "expected a literal")),
        }
    }
}

/// Interpret a backquoted table literal: `/ipfs/<cid>#<fmt>`,
/// `/ipfs/<cid>/<name>.<fmt>`, or a catalog name.
fn parse_ipfs_path(text: &str, position: usize) -> Result<SourceRef> {
    let Some(rest) = text.strip_prefix("/ipfs/") else {
        if text.is_empty() {
            return Err(syntax(position, "empty table path"));
        }
        return Ok(SourceRef::Named(text.to_string()));
    };
    let (cid_text, format_text) = if let Some((cid, format)) = rest.split_once('#') {
        (cid, format.to_string())
    } else if let Some((cid, file)) = rest.split_once('/') {
        let extension = file.rsplit_once('.').map(|(_, ext)| ext).ok_or_else(|| {
            Error::Format(format!("path segment {file:?} carries no format extension"))
        })?;
        (cid, extension.to_string())
    } else {
        return Err(Error::Format(format!(
            "table path {text:?} does not state a format (`#csv`, `#json`, or a file extension)"
        )));
    };
    let top_cid = ContentId::from_text(cid_text)?;
    let format = format_text.parse::<DataFormat>()?;
    Ok(SourceRef::Path(IpfsPath { top_cid, format }))
}

/// Parse one statement of the dialect.
pub fn parse_query(text: &str) -> Result<QueryAst> {
    let tokens = Lexer::new(text).tokens()?;
    let mut parser = Parser {
        tokens,
        index: 0,
        end: text.len(),
    };
    parser.parse_query()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cid_text() -> String {
        ContentId::of_bytes(b"table").text()
    }

    #[test]
    fn select_star_with_hash_format() {
        let ast = parse_query(&format!("select * from ipfs.`/ipfs/{}#csv`", cid_text())).unwrap();
        assert_eq!(ast.kind, QueryKind::Select);
        assert_eq!(ast.projection, Projection::Star);
        match ast.source {
            SourceRef::Path(path) => assert_eq!(path.format, DataFormat::Csv),
            other => panic!("unexpected source {other:?}"),
        }
    }

    #[test]
    fn file_extension_path_variant() {
        let ast = parse_query(&format!(
            "SELECT a FROM ipfs.`/ipfs/{}/example.json` LIMIT 5",
            cid_text()
        ))
        .unwrap();
        match ast.source {
            SourceRef::Path(path) => assert_eq!(path.format, DataFormat::Json),
            other => panic!("unexpected source {other:?}"),
        }
        assert_eq!(ast.limit, Some(5));
    }

    #[test]
    fn non_ipfs_source_is_syntax_error() {
        let err = parse_query("select a from t").unwrap_err();
        assert!(matches!(err, Error::Syntax { .. }), "{err}");
    }

    #[test]
    fn ctas_wrapping_aggregate_select() {
        let ast = parse_query(&format!(
            "create table ipfs.`out` as select a, count(*) from ipfs.`/ipfs/{}#json` group by a",
            cid_text()
        ))
        .unwrap();
        assert_eq!(
            ast.kind,
            QueryKind::CreateTableAs {
                name: "out".into()
            }
        );
        assert_eq!(ast.group_by.as_deref(), Some("a"));
        match &ast.projection {
            Projection::Items(items) => {
                assert_eq!(items[0], ProjItem::Column("a".into()));
                assert_eq!(items[1], ProjItem::Aggregate(AggFn::CountStar));
            }
            other => panic!("unexpected projection {other:?}"),
        }
    }

    #[test]
    fn cttas_is_recognized() {
        let ast = parse_query(&format!(
            "CREATE TEMPORARY TABLE ipfs.`tmp` AS SELECT * FROM ipfs.`/ipfs/{}#csv`",
            cid_text()
        ))
        .unwrap();
        assert!(matches!(ast.kind, QueryKind::CreateTempTableAs { .. }));
    }

    #[test]
    fn where_conjunction_and_operators() {
        let ast = parse_query(&format!(
            "select a from ipfs.`/ipfs/{}#csv` where a >= 3 and b != 'x' and c <> 4.5",
            cid_text()
        ))
        .unwrap();
        let predicate = ast.predicate.unwrap();
        assert_eq!(predicate.clauses.len(), 3);
        assert_eq!(predicate.clauses[0].op, CmpOp::Ge);
        assert_eq!(predicate.clauses[1].literal, Value::Text("x".into()));
        assert_eq!(predicate.clauses[2].op, CmpOp::Ne);
        assert_eq!(predicate.clauses[2].literal, Value::Float(4.5));
    }

    #[test]
    fn missing_format_suffix_is_format_error() {
        let err =
            parse_query(&format!("select * from ipfs.`/ipfs/{}`", cid_text())).unwrap_err();
        assert!(matches!(err, Error::Format(_)), "{err}");
    }

    #[test]
    fn malformed_cid_is_path_error() {
        let err = parse_query("select * from ipfs.`/ipfs/nothex#csv`").unwrap_err();
        assert!(matches!(err, Error::Path(_)), "{err}");
    }

    #[test]
    fn errors_carry_positions() {
        let err = parse_query("select , from x").unwrap_err();
        match err {
            Error::Syntax { position, .. } => assert_eq!(position, 7),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn parser_never_panics_on_fuzz() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1234);
        let alphabet: Vec<char> =
            "select from where group by limit ipfs `*(),.!<>='0123456789abc#/ \n\t"
                .chars()
                .collect();
        for _ in 0..100_000 {
            let len = rng.gen_range(0..40);
            let text: String = (0..len)
                .map(|_| alphabet[rng.gen_range(0..alphabet.len())])
                .collect();
            let _ = parse_query(&text);
        }
    }
}
