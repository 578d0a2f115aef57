//! Thin layer over tree-sitter-python: parsing, text extraction, and the
//! handful of syntactic queries (name roles, statement units, block headers)
//! shared by the analysis, slicing, and metric code.

use std::cell::RefCell;
use std::collections::BTreeSet;

use tree_sitter::{Node, Parser, Tree};

thread_local! {
    static PARSER: RefCell<Parser> = RefCell::new({
        let mut parser = Parser::new();
        parser
            .set_language(&tree_sitter_python::LANGUAGE.into())
            .expect("tree-sitter-python grammar is ABI compatible");
        parser
    });
}

/// Parsed Python source. Owns both the text and the syntax tree.
pub struct PySource {
    text: String,
    tree: Tree,
}

impl std::fmt::Debug for PySource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PySource")
            .field("len", &self.text.len())
            .field("has_error", &self.has_error())
            .finish()
    }
}

impl PySource {
    pub fn parse(text: impl Into<String>) -> Self {
        let text = text.into();
        let tree = PARSER.with(|p| {
            p.borrow_mut()
                .parse(&text, None)
                .expect("parser has a language and no cancellation flag")
        });
        PySource { text, tree }
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn root(&self) -> Node<'_> {
        self.tree.root_node()
    }

    pub fn has_error(&self) -> bool {
        self.root().has_error()
    }

    /// 1-based line of the first ERROR or MISSING node, if any.
    pub fn first_error_line(&self) -> Option<usize> {
        let mut found = None;
        walk(self.root(), &mut |n| {
            if found.is_none() && (n.is_error() || n.is_missing()) {
                found = Some(n.start_position().row + 1);
            }
        });
        found.or_else(|| self.has_error().then_some(1))
    }

    pub fn node_text(&self, node: Node<'_>) -> &str {
        &self.text[node.byte_range()]
    }

    /// First function definition at the top of the tree (decorators skipped).
    pub fn first_function(&self) -> Option<Node<'_>> {
        let mut cursor = self.root().walk();
        let found = self
            .root()
            .named_children(&mut cursor)
            .find_map(|n| unwrap_decorated(n).filter(|d| d.kind() == "function_definition"));
        found
    }
}

/// Preorder traversal over every node (named and anonymous).
pub fn walk<'t>(node: Node<'t>, f: &mut dyn FnMut(Node<'t>)) {
    f(node);
    let mut cursor = node.walk();
    for child in node.children(&mut cursor) {
        walk(child, f);
    }
}

/// Preorder traversal that visits nested function, class and lambda nodes
/// below `node` but does not descend into them.
pub fn walk_scope<'t>(node: Node<'t>, f: &mut dyn FnMut(Node<'t>)) {
    f(node);
    let mut cursor = node.walk();
    for child in node.children(&mut cursor) {
        if is_scope(child.kind()) {
            f(child);
            continue;
        }
        walk_scope(child, f);
    }
}

pub fn is_scope(kind: &str) -> bool {
    matches!(
        kind,
        "function_definition" | "class_definition" | "decorated_definition" | "lambda"
    )
}

pub fn unwrap_decorated(node: Node<'_>) -> Option<Node<'_>> {
    if node.kind() == "decorated_definition" {
        node.child_by_field_name("definition")
    } else {
        Some(node)
    }
}

pub fn is_simple_statement(kind: &str) -> bool {
    matches!(
        kind,
        "expression_statement"
            | "return_statement"
            | "pass_statement"
            | "raise_statement"
            | "assert_statement"
            | "delete_statement"
            | "global_statement"
            | "nonlocal_statement"
            | "import_statement"
            | "import_from_statement"
            | "future_import_statement"
            | "break_statement"
            | "continue_statement"
            | "print_statement"
            | "exec_statement"
            | "type_alias_statement"
    )
}

pub fn is_compound_statement(kind: &str) -> bool {
    matches!(
        kind,
        "if_statement"
            | "for_statement"
            | "while_statement"
            | "try_statement"
            | "with_statement"
            | "match_statement"
            | "function_definition"
            | "class_definition"
            | "decorated_definition"
    )
}

/// Structured control blocks: conditionals, loops, exception handling.
pub fn is_control_block(kind: &str) -> bool {
    matches!(
        kind,
        "if_statement" | "for_statement" | "while_statement" | "try_statement"
    )
}

pub fn is_statement(kind: &str) -> bool {
    is_simple_statement(kind) || is_compound_statement(kind)
}

/// Column-aware text of `node`: continuation lines lose the indentation of the
/// node's first line so the snippet stands alone.
pub fn node_text_dedented(src: &str, node: Node<'_>) -> String {
    let col = node.start_position().column;
    dedent_continuation(&src[node.byte_range()], col)
}

pub fn dedent_continuation(text: &str, col: usize) -> String {
    let mut out = String::with_capacity(text.len());
    for (i, line) in text.split('\n').enumerate() {
        if i > 0 {
            out.push('\n');
            out.push_str(strip_indent(line, col));
        } else {
            out.push_str(line);
        }
    }
    out
}

/// Remove up to `col` leading whitespace characters from `line`.
pub fn strip_indent(line: &str, col: usize) -> &str {
    let mut idx = 0;
    for (i, ch) in line.char_indices() {
        if i >= col || !(ch == ' ' || ch == '\t') {
            break;
        }
        idx = i + ch.len_utf8();
    }
    &line[idx..]
}

/// Dedent every line of `text` by `col` columns (first line included).
pub fn dedent_all(text: &str, col: usize) -> String {
    text.split('\n')
        .map(|l| strip_indent(l, col))
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn indent_all(text: &str, prefix: &str) -> String {
    text.split('\n')
        .map(|l| {
            if l.trim().is_empty() {
                String::new()
            } else {
                format!("{prefix}{l}")
            }
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Text of a compound statement up to and including the colon that opens its
/// first body, e.g. `if r > 0:` or a multi-line `def` signature.
pub fn header_text(src: &str, node: Node<'_>) -> String {
    let body_start = node
        .child_by_field_name("body")
        .or_else(|| node.child_by_field_name("consequence"))
        .map(|b| b.start_byte());
    let mut cursor = node.walk();
    let mut colon_end = None;
    for child in node.children(&mut cursor) {
        if child.kind() == ":" {
            colon_end = Some(child.end_byte());
            break;
        }
        if Some(child.start_byte()) == body_start {
            break;
        }
    }
    let end = colon_end.or(body_start).unwrap_or(node.end_byte());
    dedent_continuation(src[node.start_byte()..end].trim_end(), node.start_position().column)
}

/// Dotted name chain of a call target: `f` → [f], `a.b.c` → [a, b, c].
/// Returns `None` for computed targets (subscripts, calls other than `super()`).
pub fn dotted_chain(src: &str, node: Node<'_>) -> Option<Vec<String>> {
    match node.kind() {
        "identifier" => Some(vec![src[node.byte_range()].to_string()]),
        "attribute" => {
            let object = node.child_by_field_name("object")?;
            let attr = node.child_by_field_name("attribute")?;
            let mut chain = if object.kind() == "call" && is_super_call(src, object) {
                vec!["super()".to_string()]
            } else {
                dotted_chain(src, object)?
            };
            chain.push(src[attr.byte_range()].to_string());
            Some(chain)
        }
        _ => None,
    }
}

fn is_super_call(src: &str, call: Node<'_>) -> bool {
    call.child_by_field_name("function")
        .is_some_and(|f| f.kind() == "identifier" && &src[f.byte_range()] == "super")
}

/// Syntactic role of an identifier occurrence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NameRole {
    Load,
    Store,
    /// Augmented assignment target: read and written.
    LoadStore,
    Param,
    Def,
    AttributeName,
    KeywordName,
    Import,
    Declaration,
}

fn is_field<'t>(parent: Node<'t>, field: &str, child: Node<'t>) -> bool {
    let mut cursor = parent.walk();
    let found = parent
        .children_by_field_name(field, &mut cursor)
        .any(|n| n.id() == child.id());
    found
}

pub fn identifier_role(id: Node<'_>) -> NameRole {
    let mut child = id;
    let mut parent = id.parent();
    while let Some(p) = parent {
        match p.kind() {
            "attribute" => {
                return if is_field(p, "attribute", child) {
                    NameRole::AttributeName
                } else {
                    NameRole::Load
                };
            }
            "keyword_argument" => {
                return if is_field(p, "name", child) {
                    NameRole::KeywordName
                } else {
                    NameRole::Load
                };
            }
            "pattern_list" | "tuple_pattern" | "list_pattern" | "list_splat_pattern"
            | "dictionary_splat_pattern" | "as_pattern_target" | "parenthesized_expression" => {}
            "as_pattern" => {
                return if is_field(p, "alias", child) {
                    NameRole::Store
                } else {
                    NameRole::Load
                };
            }
            "assignment" => {
                return if is_field(p, "left", child) {
                    NameRole::Store
                } else {
                    NameRole::Load
                };
            }
            "augmented_assignment" => {
                return if is_field(p, "left", child) {
                    NameRole::LoadStore
                } else {
                    NameRole::Load
                };
            }
            "for_statement" | "for_in_clause" => {
                return if is_field(p, "left", child) {
                    NameRole::Store
                } else {
                    NameRole::Load
                };
            }
            "named_expression" => {
                return if is_field(p, "name", child) {
                    NameRole::Store
                } else {
                    NameRole::Load
                };
            }
            "function_definition" | "class_definition" => {
                return if is_field(p, "name", child) {
                    NameRole::Def
                } else {
                    NameRole::Load
                };
            }
            "parameters" | "lambda_parameters" => return NameRole::Param,
            "default_parameter" | "typed_default_parameter" => {
                return if is_field(p, "name", child) {
                    NameRole::Param
                } else {
                    NameRole::Load
                };
            }
            "typed_parameter" => {
                return if is_field(p, "type", child) {
                    NameRole::Load
                } else {
                    NameRole::Param
                };
            }
            "import_statement" | "import_from_statement" | "future_import_statement"
            | "aliased_import" | "dotted_name" | "relative_import" => return NameRole::Import,
            "global_statement" | "nonlocal_statement" => return NameRole::Declaration,
            _ => return NameRole::Load,
        }
        child = p;
        parent = p.parent();
    }
    NameRole::Load
}

/// Names read (load context) anywhere inside `node`, excluding nested scopes.
pub fn names_read(src: &str, node: Node<'_>) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    walk_scope(node, &mut |n| {
        if n.kind() == "identifier"
            && matches!(identifier_role(n), NameRole::Load | NameRole::LoadStore)
        {
            out.insert(src[n.byte_range()].to_string());
        }
    });
    out
}

/// Names bound (store context) anywhere inside `node`, excluding nested scopes
/// but including the names of nested defs themselves.
pub fn names_bound(src: &str, node: Node<'_>) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    walk_bound(src, node, &mut out);
    out
}

fn walk_bound(src: &str, node: Node<'_>, out: &mut BTreeSet<String>) {
    let mut cursor = node.walk();
    for child in node.children(&mut cursor) {
        if is_scope(child.kind()) {
            if let Some(def) = unwrap_decorated(child) {
                if let Some(name) = def.child_by_field_name("name") {
                    out.insert(src[name.byte_range()].to_string());
                }
            }
            continue;
        }
        if child.kind() == "identifier"
            && matches!(identifier_role(child), NameRole::Store | NameRole::LoadStore)
        {
            out.insert(src[child.byte_range()].to_string());
        }
        walk_bound(src, child, out);
    }
}

/// Linear sequence of statement units inside `block`, in source order: simple
/// statements, and for compound statements their header followed by the
/// units of their bodies. Nested function and class bodies are not entered.
pub fn statement_units<'t>(block: Node<'t>) -> Vec<StatementUnit<'t>> {
    let mut out = Vec::new();
    collect_units(block, &mut out);
    out
}

#[derive(Debug, Clone, Copy)]
pub struct StatementUnit<'t> {
    /// The statement (or clause) node this unit belongs to.
    pub node: Node<'t>,
    /// For compound units, the expression parts of the header (condition,
    /// iterable, with items, except types). Empty for simple statements.
    pub header_only: bool,
}

impl<'t> StatementUnit<'t> {
    /// Nodes whose reads belong to this unit.
    pub fn read_roots(&self) -> Vec<Node<'t>> {
        if !self.header_only {
            return vec![self.node];
        }
        let n = self.node;
        match n.kind() {
            "if_statement" | "elif_clause" | "while_statement" => {
                n.child_by_field_name("condition").into_iter().collect()
            }
            "for_statement" => {
                let mut v: Vec<_> = n.child_by_field_name("right").into_iter().collect();
                v.extend(n.child_by_field_name("left"));
                v
            }
            "with_statement" => {
                let mut cursor = n.walk();
                let v: Vec<_> = n
                    .children(&mut cursor)
                    .filter(|c| c.kind() == "with_clause")
                    .collect();
                v
            }
            "except_clause" | "except_group_clause" => {
                let mut cursor = n.walk();
                let v: Vec<_> = n
                    .named_children(&mut cursor)
                    .filter(|c| c.kind() != "block" && c.kind() != "comment")
                    .collect();
                v
            }
            "match_statement" => n.child_by_field_name("subject").into_iter().collect(),
            _ => Vec::new(),
        }
    }

    pub fn text(&self, src: &str) -> String {
        if self.header_only {
            header_text(src, self.node)
        } else {
            node_text_dedented(src, self.node)
        }
    }
}

fn collect_units<'t>(block: Node<'t>, out: &mut Vec<StatementUnit<'t>>) {
    let mut cursor = block.walk();
    for stmt in block.named_children(&mut cursor) {
        let kind = stmt.kind();
        if is_simple_statement(kind) {
            out.push(StatementUnit {
                node: stmt,
                header_only: false,
            });
        } else if matches!(
            kind,
            "function_definition" | "class_definition" | "decorated_definition"
        ) {
            // nested definitions are a single opaque unit
            out.push(StatementUnit {
                node: stmt,
                header_only: false,
            });
        } else if is_compound_statement(kind) {
            push_compound(stmt, out);
        }
    }
}

fn push_compound<'t>(stmt: Node<'t>, out: &mut Vec<StatementUnit<'t>>) {
    let kind = stmt.kind();
    if kind != "try_statement" {
        out.push(StatementUnit {
            node: stmt,
            header_only: true,
        });
    }
    let mut cursor = stmt.walk();
    for child in stmt.named_children(&mut cursor) {
        match child.kind() {
            "block" => collect_units(child, out),
            "elif_clause" | "except_clause" | "except_group_clause" => {
                out.push(StatementUnit {
                    node: child,
                    header_only: true,
                });
                let mut c2 = child.walk();
                for b in child.named_children(&mut c2) {
                    if b.kind() == "block" {
                        collect_units(b, out);
                    }
                }
            }
            "else_clause" | "finally_clause" => {
                let mut c2 = child.walk();
                for b in child.named_children(&mut c2) {
                    if b.kind() == "block" {
                        collect_units(b, out);
                    }
                }
            }
            "case_clause" => {
                if let Some(b) = child.child_by_field_name("consequence") {
                    collect_units(b, out);
                }
            }
            _ => {}
        }
    }
    if kind == "match_statement" {
        if let Some(body) = stmt.child_by_field_name("body") {
            let mut c2 = body.walk();
            for case in body.named_children(&mut c2) {
                if let Some(b) = case.child_by_field_name("consequence") {
                    collect_units(b, out);
                }
            }
        }
    }
}

/// Nearest enclosing statement of `node` (simple or compound).
pub fn enclosing_statement(node: Node<'_>) -> Option<Node<'_>> {
    let mut cur = node.parent();
    while let Some(n) = cur {
        if is_statement(n.kind()) {
            return Some(n);
        }
        cur = n.parent();
    }
    None
}

/// Decoded value of a `string` or `concatenated_string` node. Returns `None`
/// for f-strings and byte strings.
pub fn string_value(src: &str, node: Node<'_>) -> Option<String> {
    match node.kind() {
        "string" => {
            let mut cursor = node.walk();
            let children: Vec<_> = node.children(&mut cursor).collect();
            let start = children.iter().find(|c| c.kind() == "string_start")?;
            let end = children.iter().rev().find(|c| c.kind() == "string_end")?;
            let prefix = src[start.byte_range()]
                .trim_end_matches(['\'', '"'])
                .to_ascii_lowercase();
            if prefix.contains('f') || prefix.contains('b') {
                return None;
            }
            let raw = &src[start.end_byte()..end.start_byte()];
            Some(if prefix.contains('r') {
                raw.to_string()
            } else {
                unescape(raw)
            })
        }
        "concatenated_string" => {
            let mut cursor = node.walk();
            let mut out = String::new();
            for part in node.named_children(&mut cursor) {
                out.push_str(&string_value(src, part)?);
            }
            Some(out)
        }
        _ => None,
    }
}

fn unescape(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    let mut chars = raw.chars().peekable();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('n') => out.push('\n'),
            Some('t') => out.push('\t'),
            Some('r') => out.push('\r'),
            Some('\\') => out.push('\\'),
            Some('\'') => out.push('\''),
            Some('"') => out.push('"'),
            Some('a') => out.push('\u{7}'),
            Some('b') => out.push('\u{8}'),
            Some('f') => out.push('\u{c}'),
            Some('v') => out.push('\u{b}'),
            Some('\n') => {}
            Some('x') => {
                let hex: String = chars.by_ref().take(2).collect();
                match u32::from_str_radix(&hex, 16).ok().and_then(char::from_u32) {
                    Some(ch) => out.push(ch),
                    None => {
                        out.push_str("\\x");
                        out.push_str(&hex);
                    }
                }
            }
            Some(u @ ('u' | 'U')) => {
                let width = if u == 'u' { 4 } else { 8 };
                let hex: String = chars.by_ref().take(width).collect();
                match u32::from_str_radix(&hex, 16).ok().and_then(char::from_u32) {
                    Some(ch) => out.push(ch),
                    None => {
                        out.push('\\');
                        out.push(u);
                        out.push_str(&hex);
                    }
                }
            }
            Some(d @ '0'..='7') => {
                let mut digits = String::from(d);
                while digits.len() < 3 {
                    match chars.peek() {
                        Some(&n @ '0'..='7') => {
                            digits.push(n);
                            chars.next();
                        }
                        _ => break,
                    }
                }
                if let Some(ch) = u32::from_str_radix(&digits, 8).ok().and_then(char::from_u32) {
                    out.push(ch);
                }
            }
            Some(other) => {
                out.push('\\');
                out.push(other);
            }
            None => out.push('\\'),
        }
    }
    out
}

/// Python builtins that are treated as external call targets.
pub const BUILTINS: &[&str] = &[
    "abs", "aiter", "all", "anext", "any", "ascii", "bin", "bool", "breakpoint", "bytearray",
    "bytes", "callable", "chr", "classmethod", "compile", "complex", "delattr", "dict", "dir",
    "divmod", "enumerate", "eval", "exec", "filter", "float", "format", "frozenset", "getattr",
    "globals", "hasattr", "hash", "help", "hex", "id", "input", "int", "isinstance",
    "issubclass", "iter", "len", "list", "locals", "map", "max", "memoryview", "min", "next",
    "object", "oct", "open", "ord", "pow", "print", "property", "range", "repr", "reversed",
    "round", "set", "setattr", "slice", "sorted", "staticmethod", "str", "sum", "super",
    "tuple", "type", "vars", "zip", "__import__", "Exception", "BaseException", "ValueError",
    "TypeError", "KeyError", "IndexError", "AttributeError", "RuntimeError", "OSError",
    "IOError", "NotImplementedError", "StopIteration", "AssertionError", "ImportError",
    "LookupError", "ArithmeticError", "ZeroDivisionError", "FileNotFoundError",
    "PermissionError", "TimeoutError", "UnicodeDecodeError", "UnicodeEncodeError",
    "Warning", "DeprecationWarning", "UserWarning", "True", "False", "None", "NotImplemented",
    "Ellipsis", "__name__", "__file__", "__doc__", "self", "cls",
];

pub fn is_builtin(name: &str) -> bool {
    BUILTINS.contains(&name)
}

/// Reserved words of the subject language.
pub const KEYWORDS: &[&str] = &[
    "False", "None", "True", "and", "as", "assert", "async", "await", "break", "class",
    "continue", "def", "del", "elif", "else", "except", "finally", "for", "from", "global",
    "if", "import", "in", "is", "lambda", "nonlocal", "not", "or", "pass", "raise", "return",
    "try", "while", "with", "yield",
];

pub fn is_keyword(token: &str) -> bool {
    KEYWORDS.contains(&token)
}
