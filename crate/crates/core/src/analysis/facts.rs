use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

/// Inclusive 1-based line range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn contains_line(&self, line: usize) -> bool {
        self.start <= line && line <= self.end
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    Positional,
    VarPositional,
    KeywordOnly,
    VarKeyword,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub annotation: Option<String>,
    pub default: Option<String>,
    pub kind: ParamKind,
}

/// Names visible inside one function body.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionScope {
    /// Every name bound in the body, parameters included.
    pub locals: BTreeSet<String>,
    pub params: BTreeSet<String>,
    /// Nested `def`/`class` name → qualified name.
    pub nested: BTreeMap<String, String>,
    /// Function-level imports: alias → target.
    pub imports: BTreeMap<String, ImportBinding>,
    pub globals: BTreeSet<String>,
    pub nonlocals: BTreeSet<String>,
    /// Locals whose every assignment is `name = Callee(...)` with one dotted callee.
    pub constructed: BTreeMap<String, Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionDecl {
    pub qname: String,
    pub name: String,
    /// Signature through the opening colon, continuation lines dedented.
    pub header_text: String,
    /// Body lines after the header, dedented to the `def` column.
    pub body_text: String,
    /// Whole definition without decorators, dedented to the `def` column.
    pub source_text: String,
    pub docstring: Option<String>,
    pub span: Span,
    /// Column of the `def` keyword (or `async`).
    pub def_column: usize,
    pub params: Vec<Param>,
    pub decorators: Vec<String>,
    pub is_method: bool,
    pub is_async: bool,
    pub enclosing_class: Option<String>,
    pub enclosing_function: Option<String>,
    /// Number of statements (recursive) and assert statements in the body.
    pub statement_count: usize,
    pub assert_count: usize,
    pub scope: FunctionScope,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassDecl {
    pub qname: String,
    pub name: String,
    /// Base class expressions as written (`A`, `mod.Base`).
    pub bases: Vec<String>,
    /// Qualified names of methods defined directly in the class body.
    pub methods: Vec<String>,
    pub span: Span,
    pub enclosing_function: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImportKind {
    Module,
    Symbol,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImportBinding {
    pub local_alias: String,
    pub target_qname: String,
    pub kind: ImportKind,
    pub line: usize,
    /// Inside an `if`/`try` at module level.
    #[serde(default)]
    pub conditional: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GlobalVar {
    pub name: String,
    pub span: Span,
    #[serde(default)]
    pub conditional: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallSite {
    pub caller_qname: String,
    pub callee_expr_text: String,
    /// Dotted chain of the callee when it is a plain name or attribute chain.
    pub callee_chain: Option<Vec<String>>,
    /// Dotted text before the final attribute, empty for bare names.
    pub receiver_chain: String,
    pub line: usize,
    pub column: usize,
    pub enclosing_statement_text: String,
    pub arg_texts: Vec<String>,
    #[serde(default)]
    pub resolved_callee: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BindingOrigin {
    Function,
    Class,
    Import,
    Global,
}

/// One module-level binding event, kept in source order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModuleBinding {
    pub name: String,
    pub target: String,
    pub origin: BindingOrigin,
    pub import_kind: Option<ImportKind>,
    pub line: usize,
    pub conditional: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileFacts {
    pub module_path: String,
    pub module_qname: String,
    pub functions: Vec<FunctionDecl>,
    pub classes: Vec<ClassDecl>,
    pub imports: Vec<ImportBinding>,
    pub globals: Vec<GlobalVar>,
    pub star_imports: Vec<String>,
    pub calls: Vec<CallSite>,
    /// Module-level binding events in source order.
    pub bindings: Vec<ModuleBinding>,
    /// Calls made outside any function body (not graph edges).
    pub module_level_calls: usize,
    pub line_count: usize,
}

impl FileFacts {
    pub fn function(&self, qname: &str) -> Option<&FunctionDecl> {
        self.functions.iter().find(|f| f.qname == qname)
    }

    pub fn class(&self, qname: &str) -> Option<&ClassDecl> {
        self.classes.iter().find(|c| c.qname == qname)
    }

    pub fn is_package_init(&self) -> bool {
        self.module_path.ends_with("__init__.py")
    }

    /// Package used as the anchor for relative imports.
    pub fn package(&self) -> String {
        package_of(&self.module_path, &self.module_qname)
    }
}

pub(crate) fn package_of(module_path: &str, module_qname: &str) -> String {
    if module_path.ends_with("__init__.py") {
        module_qname.to_string()
    } else {
        match module_qname.rsplit_once('.') {
            Some((pkg, _)) => pkg.to_string(),
            None => String::new(),
        }
    }
}

/// Dotted module name for a repo-relative path: separators become dots, the
/// `.py` suffix and a trailing `__init__` are dropped.
pub fn module_qname(module_path: &str) -> String {
    let normalized = module_path.replace('\\', "/");
    let trimmed = normalized.trim_start_matches("./");
    let stem = trimmed
        .strip_suffix(".py")
        .or_else(|| trimmed.strip_suffix(".pyi"))
        .unwrap_or(trimmed);
    let mut parts: Vec<&str> = stem.split('/').filter(|p| !p.is_empty()).collect();
    if parts.last() == Some(&"__init__") && parts.len() > 1 {
        parts.pop();
    }
    parts.join(".")
}
