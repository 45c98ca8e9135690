//! Merged-label HTML structure tokens.
//!
//! Simple cells collapse into a single token (`<td>[]</td>` for non-empty,
//! `<td></td>` for empty). Spanning cells expand to `<td`, one attribute token
//! per span greater than one, `>` and `</td>`. The `<td` token stands for the
//! whole spanning cell when a per-cell representation is needed.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Cell, TableGrid};

pub const DEFAULT_MAX_SPAN: u32 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Token {
    Pad,
    Sos,
    Eos,
    RowOpen,
    RowClose,
    /// `<td>[]</td>`
    FilledCell,
    /// `<td></td>`
    EmptyCell,
    /// `<td`
    SpanOpen,
    /// `>`
    SpanEnd,
    /// `</td>`
    CellClose,
    ColSpan(u32),
    RowSpan(u32),
}

impl Token {
    /// Tokens that stand for one non-empty cell and trigger box decoding.
    pub fn is_cell_trigger(self) -> bool {
        matches!(self, Token::FilledCell | Token::SpanOpen)
    }

    pub fn as_html(self) -> String {
        match self {
            Token::Pad => "<pad>".into(),
            Token::Sos => "<sos>".into(),
            Token::Eos => "<eos>".into(),
            Token::RowOpen => "<tr>".into(),
            Token::RowClose => "</tr>".into(),
            Token::FilledCell => "<td>[]</td>".into(),
            Token::EmptyCell => "<td></td>".into(),
            Token::SpanOpen => "<td".into(),
            Token::SpanEnd => ">".into(),
            Token::CellClose => "</td>".into(),
            Token::ColSpan(n) => format!("colspan=\"{n}\""),
            Token::RowSpan(n) => format!("rowspan=\"{n}\""),
        }
    }

    pub fn parse(s: &str) -> Option<Token> {
        let t = match s.trim() {
            "<pad>" => Token::Pad,
            "<sos>" => Token::Sos,
            "<eos>" => Token::Eos,
            "<tr>" => Token::RowOpen,
            "</tr>" => Token::RowClose,
            "<td>[]</td>" => Token::FilledCell,
            "<td></td>" => Token::EmptyCell,
            "<td" => Token::SpanOpen,
            ">" => Token::SpanEnd,
            "</td>" => Token::CellClose,
            other => {
                let (name, rest) = other.split_once('=')?;
                let n: u32 = rest.trim_matches('"').parse().ok()?;
                match name {
                    "colspan" => Token::ColSpan(n),
                    "rowspan" => Token::RowSpan(n),
                    _ => return None,
                }
            }
        };
        Some(t)
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.as_html())
    }
}

/// Fixed token vocabulary. Span attributes are enumerated for `2..=max_span`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    pub max_span: u32,
}

const FIXED: [Token; 10] = [
    Token::Pad,
    Token::Sos,
    Token::Eos,
    Token::RowOpen,
    Token::RowClose,
    Token::FilledCell,
    Token::EmptyCell,
    Token::SpanOpen,
    Token::SpanEnd,
    Token::CellClose,
];

impl Default for Vocab {
    fn default() -> Self {
        Self {
            max_span: DEFAULT_MAX_SPAN,
        }
    }
}

impl Vocab {
    pub fn new(max_span: u32) -> Self {
        Self {
            max_span: max_span.max(1),
        }
    }

    pub fn len(&self) -> usize {
        FIXED.len() + 2 * (self.max_span as usize - 1)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn pad_id(&self) -> u32 {
        0
    }

    pub fn id(&self, token: Token) -> Result<u32> {
        let n_attr = self.max_span - 1;
        let check = |n: u32| {
            if (2..=self.max_span).contains(&n) {
                Ok(n - 2)
            } else {
                Err(Error::SpanOutOfVocabulary {
                    span: n,
                    max_span: self.max_span,
                })
            }
        };
        Ok(match token {
            Token::ColSpan(n) => FIXED.len() as u32 + check(n)?,
            Token::RowSpan(n) => FIXED.len() as u32 + n_attr + check(n)?,
            t => FIXED.iter().position(|f| *f == t).expect("fixed token") as u32,
        })
    }

    pub fn token(&self, id: u32) -> Option<Token> {
        let id = id as usize;
        let n_attr = self.max_span as usize - 1;
        if id < FIXED.len() {
            Some(FIXED[id])
        } else if id < FIXED.len() + n_attr {
            Some(Token::ColSpan((id - FIXED.len()) as u32 + 2))
        } else if id < FIXED.len() + 2 * n_attr {
            Some(Token::RowSpan((id - FIXED.len() - n_attr) as u32 + 2))
        } else {
            None
        }
    }

    pub fn tokens(&self) -> impl Iterator<Item = Token> + '_ {
        (0..self.len() as u32).map(|i| self.token(i).expect("in range"))
    }

    pub fn encode(&self, seq: &TokenSeq) -> Result<Vec<u32>> {
        seq.0.iter().map(|t| self.id(*t)).collect()
    }

    /// Ids outside the vocabulary decode to `Pad`.
    pub fn decode(&self, ids: &[u32]) -> TokenSeq {
        TokenSeq(
            ids.iter()
                .map(|&i| self.token(i).unwrap_or(Token::Pad))
                .collect(),
        )
    }
}

/// Tokenized HTML structure sequence.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TokenSeq(pub Vec<Token>);

/// Serialized as the list of HTML token strings.
impl Serialize for TokenSeq {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_strings().serialize(s)
    }
}

impl<'de> Deserialize<'de> for TokenSeq {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let items = Vec::<String>::deserialize(d)?;
        TokenSeq::parse_strings(&items).map_err(serde::de::Error::custom)
    }
}

impl TokenSeq {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[Token] {
        &self.0
    }

    /// Positions of cell-trigger tokens before the first `<eos>`.
    pub fn trigger_positions(&self) -> Vec<usize> {
        self.0
            .iter()
            .take_while(|t| **t != Token::Eos)
            .enumerate()
            .filter(|(_, t)| t.is_cell_trigger())
            .map(|(i, _)| i)
            .collect()
    }

    pub fn to_strings(&self) -> Vec<String> {
        self.0.iter().map(|t| t.as_html()).collect()
    }

    pub fn parse_strings<S: AsRef<str>>(items: &[S]) -> Result<TokenSeq> {
        items
            .iter()
            .map(|s| {
                Token::parse(s.as_ref())
                    .ok_or_else(|| Error::Structure(format!("unknown token {:?}", s.as_ref())))
            })
            .collect::<Result<Vec<_>>>()
            .map(TokenSeq)
    }
}

impl FromIterator<Token> for TokenSeq {
    fn from_iter<I: IntoIterator<Item = Token>>(iter: I) -> Self {
        TokenSeq(iter.into_iter().collect())
    }
}

/// Tokenizes the logical structure of `grid`. Spanning cells always use the
/// `<td` expansion and therefore decode as non-empty.
pub fn tokenize(grid: &TableGrid, max_span: u32) -> Result<TokenSeq> {
    let mut out = vec![Token::Sos];
    for row in grid.rows() {
        out.push(Token::RowOpen);
        for cell in row {
            for span in [cell.rowspan, cell.colspan] {
                if span > max_span {
                    return Err(Error::SpanOutOfVocabulary { span, max_span });
                }
                if span == 0 {
                    return Err(Error::Structure("span must be at least 1".into()));
                }
            }
            if cell.is_spanning() {
                out.push(Token::SpanOpen);
                if cell.colspan > 1 {
                    out.push(Token::ColSpan(cell.colspan));
                }
                if cell.rowspan > 1 {
                    out.push(Token::RowSpan(cell.rowspan));
                }
                out.push(Token::SpanEnd);
                out.push(Token::CellClose);
            } else if cell.is_empty {
                out.push(Token::EmptyCell);
            } else {
                out.push(Token::FilledCell);
            }
        }
        out.push(Token::RowClose);
    }
    out.push(Token::Eos);
    Ok(TokenSeq(out))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RepairKind {
    /// The sequence does not start with `<sos>`.
    MissingSos,
    /// No `<eos>` was found (truncated output).
    MissingEos,
    /// Tokens after `<eos>` were ignored.
    TrailingTokens,
    /// `<pad>` or a repeated `<sos>` inside the sequence was ignored.
    StrayToken,
    /// A cell appeared outside a row; a row was opened for it.
    ImplicitRow,
    /// A row was still open at `<tr>` or at the end and was closed.
    UnclosedRow,
    /// `</tr>` without an open row was ignored.
    StrayRowClose,
    /// A span attribute without a preceding `<td`, or after its `>`, was dropped.
    DroppedAttribute,
    /// `>` or `</td>` without an open `<td` was dropped.
    DroppedCellPart,
    /// A `<td` group was ended by another structural token or the end of input.
    IncompleteCell,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Repair {
    pub position: usize,
    pub kind: RepairKind,
}

/// Detokenization result: the recovered grid plus every repair applied.
#[derive(Debug, Clone, PartialEq)]
pub struct Detokenized {
    pub grid: TableGrid,
    pub repairs: Vec<Repair>,
}

impl Detokenized {
    pub fn is_repaired(&self) -> bool {
        !self.repairs.is_empty()
    }

    pub fn has(&self, kind: RepairKind) -> bool {
        self.repairs.iter().any(|r| r.kind == kind)
    }
}

#[derive(Default)]
struct PendingSpan {
    rowspan: u32,
    colspan: u32,
    closed: bool,
}

/// Rebuilds a grid from any token sequence.
///
/// Repairs only make the sequence parseable; the recovered structure is not
/// corrected: unclosed rows are closed, cells outside a row open an implicit
/// row and stray span attributes are dropped. The resulting grid may be
/// ragged when the tokens describe a ragged table.
pub fn detokenize(seq: &TokenSeq) -> Detokenized {
    let mut repairs = Vec::new();
    let mut flag = |position, kind| repairs.push(Repair { position, kind });
    let mut rows: Vec<Vec<Cell>> = Vec::new();
    let mut row: Option<Vec<Cell>> = None;
    let mut pending: Option<PendingSpan> = None;
    let mut saw_eos = false;

    fn finish_span(
        pending: &mut Option<PendingSpan>,
        row: &mut Option<Vec<Cell>>,
        complete: bool,
    ) -> bool {
        match pending.take() {
            Some(p) => {
                row.get_or_insert_with(Vec::new)
                    .push(Cell::spanning(p.rowspan.max(1), p.colspan.max(1)));
                !complete
            }
            None => false,
        }
    }

    let tokens = seq.as_slice();
    if tokens.first() != Some(&Token::Sos) {
        flag(0, RepairKind::MissingSos);
    }
    for (pos, &tok) in tokens.iter().enumerate() {
        match tok {
            Token::Sos if pos == 0 => {}
            Token::Sos | Token::Pad => flag(pos, RepairKind::StrayToken),
            Token::Eos => {
                saw_eos = true;
                if pos + 1 < tokens.len() {
                    flag(pos + 1, RepairKind::TrailingTokens);
                }
                break;
            }
            Token::RowOpen | Token::RowClose => {
                if finish_span(&mut pending, &mut row, false) {
                    flag(pos, RepairKind::IncompleteCell);
                }
                match (tok, row.take()) {
                    (Token::RowOpen, Some(open)) => {
                        flag(pos, RepairKind::UnclosedRow);
                        rows.push(open);
                        row = Some(Vec::new());
                    }
                    (Token::RowOpen, None) => row = Some(Vec::new()),
                    (_, Some(open)) => rows.push(open),
                    (_, None) => flag(pos, RepairKind::StrayRowClose),
                }
            }
            Token::FilledCell | Token::EmptyCell | Token::SpanOpen => {
                if finish_span(&mut pending, &mut row, false) {
                    flag(pos, RepairKind::IncompleteCell);
                }
                if row.is_none() {
                    flag(pos, RepairKind::ImplicitRow);
                    row = Some(Vec::new());
                }
                let open = row.as_mut().expect("row opened above");
                match tok {
                    Token::FilledCell => open.push(Cell::filled()),
                    Token::EmptyCell => open.push(Cell::empty()),
                    _ => {
                        pending = Some(PendingSpan {
                            rowspan: 1,
                            colspan: 1,
                            closed: false,
                        })
                    }
                }
            }
            Token::ColSpan(n) | Token::RowSpan(n) => match pending.as_mut() {
                Some(p) if !p.closed && n >= 1 => {
                    if matches!(tok, Token::ColSpan(_)) {
                        p.colspan = n;
                    } else {
                        p.rowspan = n;
                    }
                }
                _ => flag(pos, RepairKind::DroppedAttribute),
            },
            Token::SpanEnd => match pending.as_mut() {
                Some(p) if !p.closed => p.closed = true,
                _ => flag(pos, RepairKind::DroppedCellPart),
            },
            Token::CellClose => match pending.as_ref() {
                Some(p) => {
                    let complete = p.closed;
                    finish_span(&mut pending, &mut row, complete);
                    if !complete {
                        flag(pos, RepairKind::IncompleteCell);
                    }
                }
                None => flag(pos, RepairKind::DroppedCellPart),
            },
        }
    }
    let end = tokens.len();
    if !saw_eos {
        flag(end, RepairKind::MissingEos);
    }
    if finish_span(&mut pending, &mut row, false) {
        flag(end, RepairKind::IncompleteCell);
    }
    if let Some(open) = row.take() {
        flag(end, RepairKind::UnclosedRow);
        rows.push(open);
    }
    Detokenized {
        grid: TableGrid::new(rows),
        repairs,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    use Token::*;

    #[test]
    fn simple_row_uses_merged_labels() {
        let g = TableGrid::new(vec![vec![Cell::filled(), Cell::empty()]]);
        let seq = tokenize(&g, 5).unwrap();
        assert_eq!(
            seq.0,
            vec![Sos, RowOpen, FilledCell, EmptyCell, RowClose, Eos]
        );
    }

    #[test]
    fn spanning_cell_expands() {
        let g = TableGrid::new(vec![vec![Cell::spanning(1, 2)]]);
        let seq = tokenize(&g, 5).unwrap();
        assert_eq!(
            seq.0,
            vec![
                Sos,
                RowOpen,
                SpanOpen,
                ColSpan(2),
                SpanEnd,
                CellClose,
                RowClose,
                Eos
            ]
        );
        assert_eq!(seq.trigger_positions(), vec![2]);
    }

    #[test]
    fn empty_grid() {
        let seq = tokenize(&TableGrid::default(), 5).unwrap();
        assert_eq!(seq.0, vec![Sos, Eos]);
        let d = detokenize(&seq);
        assert!(d.grid.is_empty());
        assert!(!d.is_repaired());
    }

    #[test]
    fn span_over_vocabulary_is_an_error() {
        let g = TableGrid::new(vec![vec![Cell::spanning(1, 6)]]);
        assert!(matches!(
            tokenize(&g, 5),
            Err(Error::SpanOutOfVocabulary {
                span: 6,
                max_span: 5
            })
        ));
    }

    #[test]
    fn missing_row_close_is_repaired() {
        let d = detokenize(&TokenSeq(vec![Sos, RowOpen, FilledCell, Eos]));
        assert!(d.grid.same_structure(&TableGrid::simple(1, 1)));
        assert_eq!(
            d.repairs,
            vec![Repair {
                position: 4,
                kind: RepairKind::UnclosedRow
            }]
        );
    }

    #[test]
    fn cell_outside_row_opens_implicit_row() {
        let d = detokenize(&TokenSeq(vec![Sos, FilledCell, EmptyCell, Eos]));
        assert!(d.has(RepairKind::ImplicitRow));
        assert_eq!(d.grid.rows().len(), 1);
        assert_eq!(d.grid.n_cells(), 2);
    }

    #[test]
    fn stray_attribute_is_dropped() {
        let d = detokenize(&TokenSeq(vec![
            Sos,
            RowOpen,
            ColSpan(2),
            FilledCell,
            RowClose,
            Eos,
        ]));
        assert!(d.has(RepairKind::DroppedAttribute));
        assert!(d.grid.same_structure(&TableGrid::simple(1, 1)));
    }

    #[test]
    fn truncated_span_group_still_yields_a_cell() {
        let d = detokenize(&TokenSeq(vec![Sos, RowOpen, SpanOpen, RowSpan(2)]));
        assert!(d.has(RepairKind::MissingEos));
        assert!(d.has(RepairKind::IncompleteCell));
        let cell = &d.grid.rows()[0][0];
        assert_eq!((cell.rowspan, cell.colspan, cell.is_empty), (2, 1, false));
    }

    #[test]
    fn trailing_tokens_after_eos_are_ignored() {
        let d = detokenize(&TokenSeq(vec![Sos, Eos, RowOpen, FilledCell]));
        assert!(d.grid.is_empty());
        assert!(d.has(RepairKind::TrailingTokens));
    }

    #[test]
    fn vocab_ids_roundtrip() {
        let v = Vocab::new(5);
        assert_eq!(v.len(), 18);
        for (i, t) in v.tokens().enumerate() {
            assert_eq!(v.id(t).unwrap(), i as u32);
            assert_eq!(Token::parse(&t.as_html()), Some(t));
        }
        assert!(v.id(ColSpan(6)).is_err());
        assert!(v.id(RowSpan(1)).is_err());
        assert_eq!(v.token(18), None);
    }

    fn arb_tokens() -> impl Strategy<Value = Vec<Token>> {
        let tok = prop_oneof![
            Just(Sos),
            Just(Eos),
            Just(Pad),
            Just(RowOpen),
            Just(RowClose),
            Just(FilledCell),
            Just(EmptyCell),
            Just(SpanOpen),
            Just(SpanEnd),
            Just(CellClose),
            (2u32..6).prop_map(ColSpan),
            (2u32..6).prop_map(RowSpan),
        ];
        prop::collection::vec(tok, 0..40)
    }

    proptest! {
        #[test]
        fn detokenize_is_total_and_keeps_trigger_count(tokens in arb_tokens()) {
            let seq = TokenSeq(tokens);
            let d = detokenize(&seq);
            prop_assert_eq!(d.grid.non_empty_cells().count(), seq.trigger_positions().len());
        }
    }
}
