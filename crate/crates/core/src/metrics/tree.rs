//! Ordered `table → tr → td` trees, built from grids or from table HTML.

use crate::error::{Error, Result};
use crate::grid::TableGrid;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tag {
    Table,
    Tr,
    Td,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub tag: Tag,
    pub colspan: u32,
    pub rowspan: u32,
    pub content: String,
    pub children: Vec<usize>,
}

impl Node {
    fn new(tag: Tag) -> Self {
        Self {
            tag,
            colspan: 1,
            rowspan: 1,
            content: String::new(),
            children: Vec::new(),
        }
    }
}

/// Arena-backed ordered tree; node 0 is the `table` root when non-empty.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TableTree {
    pub nodes: Vec<Node>,
}

impl TableTree {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn root(&self) -> Option<usize> {
        (!self.nodes.is_empty()).then_some(0)
    }

    fn push(&mut self, parent: Option<usize>, node: Node) -> usize {
        let id = self.nodes.len();
        self.nodes.push(node);
        if let Some(p) = parent {
            self.nodes[p].children.push(id);
        }
        id
    }

    /// Tree of `grid`; cell content is kept only when `with_content`.
    pub fn from_grid(grid: &TableGrid, with_content: bool) -> Self {
        let mut t = TableTree::default();
        let root = t.push(None, Node::new(Tag::Table));
        for row in grid.rows() {
            let tr = t.push(Some(root), Node::new(Tag::Tr));
            for cell in row {
                let mut td = Node::new(Tag::Td);
                td.colspan = cell.colspan;
                td.rowspan = cell.rowspan;
                if with_content {
                    td.content = cell.content.clone();
                }
                t.push(Some(tr), td);
            }
        }
        t
    }

    /// Parses the table subset of HTML: `table`, `tr`, `td`/`th` with
    /// `colspan`/`rowspan`; `thead`/`tbody`/`tfoot` and other inline tags
    /// are transparent and text inside a cell becomes its content.
    pub fn from_html(html: &str) -> Result<Self> {
        let mut t = TableTree::default();
        let mut table: Option<usize> = None;
        let mut tr: Option<usize> = None;
        let mut td: Option<usize> = None;
        let mut rest = html;
        while !rest.is_empty() {
            if let Some(after) = rest.strip_prefix('<') {
                let end = after
                    .find('>')
                    .ok_or_else(|| Error::MetricInput("unterminated tag".into()))?;
                let inner = after[..end].trim();
                rest = &after[end + 1..];
                let closing = inner.starts_with('/');
                let body = inner.trim_start_matches('/').trim_end_matches('/');
                let name_end = body.find(char::is_whitespace).unwrap_or(body.len());
                let name = body[..name_end].to_ascii_lowercase();
                let attrs = &body[name_end..];
                match (name.as_str(), closing) {
                    ("table", false) => {
                        if table.is_none() {
                            table = Some(t.push(None, Node::new(Tag::Table)));
                        }
                    }
                    ("tr", false) => {
                        let parent =
                            *table.get_or_insert_with(|| t.push(None, Node::new(Tag::Table)));
                        tr = Some(t.push(Some(parent), Node::new(Tag::Tr)));
                        td = None;
                    }
                    ("tr", true) => {
                        tr = None;
                        td = None;
                    }
                    ("td" | "th", false) => {
                        let parent = match tr {
                            Some(p) => p,
                            None => {
                                let root = *table
                                    .get_or_insert_with(|| t.push(None, Node::new(Tag::Table)));
                                let p = t.push(Some(root), Node::new(Tag::Tr));
                                tr = Some(p);
                                p
                            }
                        };
                        let mut node = Node::new(Tag::Td);
                        node.colspan = attr_u32(attrs, "colspan").unwrap_or(1);
                        node.rowspan = attr_u32(attrs, "rowspan").unwrap_or(1);
                        td = Some(t.push(Some(parent), node));
                    }
                    ("td" | "th", true) => td = None,
                    _ => {}
                }
            } else {
                let end = rest.find('<').unwrap_or(rest.len());
                if let Some(cell) = td {
                    t.nodes[cell].content.push_str(&unescape(&rest[..end]));
                }
                rest = &rest[end..];
            }
        }
        Ok(t)
    }

    /// Node ids in post-order.
    pub fn postorder(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.nodes.len());
        if let Some(root) = self.root() {
            let mut stack = vec![(root, false)];
            while let Some((n, expanded)) = stack.pop() {
                if expanded {
                    out.push(n);
                } else {
                    stack.push((n, true));
                    for &c in self.nodes[n].children.iter().rev() {
                        stack.push((c, false));
                    }
                }
            }
        }
        out
    }
}

fn attr_u32(attrs: &str, name: &str) -> Option<u32> {
    let lower = attrs.to_ascii_lowercase();
    let start = lower.find(name)? + name.len();
    let rest = lower[start..].trim_start().strip_prefix('=')?.trim_start();
    let digits: String = rest
        .trim_start_matches(['"', '\''])
        .chars()
        .take_while(char::is_ascii_digit)
        .collect();
    digits.parse().ok().filter(|&n| n >= 1)
}

fn unescape(text: &str) -> String {
    text.replace("&lt;", "<")
        .replace("&gt;", ">")
        .replace("&quot;", "\"")
        .replace("&#39;", "'")
        .replace("&amp;", "&")
}
