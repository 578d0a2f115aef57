use std::collections::{BTreeMap, BTreeSet};

use tree_sitter::Node;

use super::facts::*;
use crate::error::{Error, Result};
use crate::pyast::{self, NameRole, PySource};

/// Decode `bytes` as UTF-8 and parse them.
pub fn parse_file_bytes(bytes: &[u8], module_path: &str) -> Result<FileFacts> {
    let text = std::str::from_utf8(bytes).map_err(|_| Error::Decode {
        path: module_path.to_string(),
    })?;
    parse_file(text, module_path)
}

/// Parse one source file into normalized syntax facts.
pub fn parse_file(source: &str, module_path: &str) -> Result<FileFacts> {
    let parsed = PySource::parse(source);
    if parsed.has_error() {
        return Err(Error::Syntax {
            path: module_path.to_string(),
            line: parsed.first_error_line().unwrap_or(1),
        });
    }
    let module_qname = module_qname(module_path);
    let mut builder = FactsBuilder {
        src: parsed.text(),
        package: package_of(module_path, &module_qname),
        facts: FileFacts {
            module_path: module_path.to_string(),
            module_qname: module_qname.clone(),
            functions: Vec::new(),
            classes: Vec::new(),
            imports: Vec::new(),
            globals: Vec::new(),
            star_imports: Vec::new(),
            calls: Vec::new(),
            bindings: Vec::new(),
            module_level_calls: 0,
            line_count: source.lines().count(),
        },
        used_qnames: BTreeSet::new(),
    };
    let ctx = Ctx {
        prefix: module_qname,
        enclosing_class: None,
        enclosing_function: None,
        module_level: true,
        conditional: false,
    };
    builder.visit_block(parsed.root(), &ctx);
    Ok(builder.facts)
}

#[derive(Clone)]
struct Ctx {
    prefix: String,
    enclosing_class: Option<String>,
    enclosing_function: Option<String>,
    module_level: bool,
    conditional: bool,
}

struct FactsBuilder<'s> {
    src: &'s str,
    package: String,
    facts: FileFacts,
    used_qnames: BTreeSet<String>,
}

impl<'s> FactsBuilder<'s> {
    fn text(&self, node: Node<'_>) -> &'s str {
        &self.src[node.byte_range()]
    }

    fn unique_qname(&mut self, base: String, line: usize) -> String {
        let q = if self.used_qnames.contains(&base) {
            format!("{base}@{line}")
        } else {
            base
        };
        self.used_qnames.insert(q.clone());
        q
    }

    fn visit_block(&mut self, block: Node<'_>, ctx: &Ctx) {
        let mut cursor = block.walk();
        let children: Vec<_> = block.named_children(&mut cursor).collect();
        for stmt in children {
            self.visit_statement(stmt, ctx);
        }
    }

    fn visit_statement(&mut self, stmt: Node<'_>, ctx: &Ctx) {
        match stmt.kind() {
            "decorated_definition" => {
                let decorators = self.decorators(stmt);
                if let Some(def) = stmt.child_by_field_name("definition") {
                    match def.kind() {
                        "function_definition" => self.function(def, decorators, ctx),
                        "class_definition" => self.class(def, ctx),
                        _ => {}
                    }
                }
            }
            "function_definition" => self.function(stmt, Vec::new(), ctx),
            "class_definition" => self.class(stmt, ctx),
            "import_statement" | "import_from_statement" if ctx.module_level => {
                let line = stmt.start_position().row + 1;
                let (bindings, stars) = parse_import(self.src, stmt, &self.package, line);
                for mut b in bindings {
                    b.conditional = ctx.conditional;
                    self.facts.bindings.push(ModuleBinding {
                        name: b.local_alias.clone(),
                        target: b.target_qname.clone(),
                        origin: BindingOrigin::Import,
                        import_kind: Some(b.kind),
                        line,
                        conditional: ctx.conditional,
                    });
                    self.facts.imports.push(b);
                }
                self.facts.star_imports.extend(stars);
            }
            "expression_statement" if ctx.module_level => {
                self.count_module_calls(stmt);
                let mut cursor = stmt.walk();
                let parts: Vec<_> = stmt.named_children(&mut cursor).collect();
                for part in parts {
                    if matches!(part.kind(), "assignment" | "augmented_assignment") {
                        self.module_assignment(part, stmt, ctx);
                    }
                }
            }
            kind if pyast::is_compound_statement(kind) => {
                if ctx.module_level || ctx.enclosing_function.is_none() {
                    self.count_header_calls(stmt);
                }
                let inner = Ctx {
                    conditional: ctx.conditional || ctx.module_level,
                    ..ctx.clone()
                };
                for block in compound_blocks(stmt) {
                    self.visit_block(block, &inner);
                }
            }
            kind if pyast::is_simple_statement(kind) && ctx.enclosing_function.is_none() => {
                self.count_module_calls(stmt);
            }
            _ => {}
        }
    }

    fn count_module_calls(&mut self, node: Node<'_>) {
        let mut n = 0;
        pyast::walk_scope(node, &mut |c| {
            if c.kind() == "call" {
                n += 1;
            }
        });
        self.facts.module_level_calls += n;
    }

    fn count_header_calls(&mut self, stmt: Node<'_>) {
        for field in ["condition", "right", "subject"] {
            if let Some(expr) = stmt.child_by_field_name(field) {
                self.count_module_calls(expr);
            }
        }
    }

    fn module_assignment(&mut self, assign: Node<'_>, stmt: Node<'_>, ctx: &Ctx) {
        let Some(left) = assign.child_by_field_name("left") else {
            return;
        };
        let span = Span {
            start: stmt.start_position().row + 1,
            end: stmt.end_position().row + 1,
        };
        let mut names = Vec::new();
        pyast::walk(left, &mut |n| {
            if n.kind() == "identifier"
                && matches!(
                    pyast::identifier_role(n),
                    NameRole::Store | NameRole::LoadStore
                )
            {
                names.push(self.text(n).to_string());
            }
        });
        for name in names {
            self.facts.bindings.push(ModuleBinding {
                name: name.clone(),
                target: format!("{}.{}", self.facts.module_qname, name),
                origin: BindingOrigin::Global,
                import_kind: None,
                line: span.start,
                conditional: ctx.conditional,
            });
            self.facts.globals.push(GlobalVar {
                name,
                span,
                conditional: ctx.conditional,
            });
        }
        // chained assignment `a = b = 1`
        if let Some(right) = assign.child_by_field_name("right") {
            if right.kind() == "assignment" {
                self.module_assignment(right, stmt, ctx);
            }
        }
    }

    fn decorators(&self, decorated: Node<'_>) -> Vec<String> {
        let mut cursor = decorated.walk();
        let decos: Vec<_> = decorated
            .named_children(&mut cursor)
            .filter(|c| c.kind() == "decorator")
            .collect();
        decos
            .into_iter()
            .map(|d| {
                let text = self.text(d).trim_start_matches('@').trim();
                text.split('(').next().unwrap_or(text).trim().to_string()
            })
            .collect()
    }

    fn function(&mut self, def: Node<'_>, decorators: Vec<String>, ctx: &Ctx) {
        let Some(name_node) = def.child_by_field_name("name") else {
            return;
        };
        let Some(body) = def.child_by_field_name("body") else {
            return;
        };
        let name = self.text(name_node).to_string();
        let start_line = def.start_position().row + 1;
        let qname = self.unique_qname(format!("{}.{}", ctx.prefix, name), start_line);
        let def_column = def.start_position().column;

        let header_text = pyast::header_text(self.src, def);
        let source_text = pyast::node_text_dedented(self.src, def);
        let body_text = self.body_text(def, body, def_column);
        let docstring = docstring_of(self.src, body);
        let params = def
            .child_by_field_name("parameters")
            .map(|p| parse_params(self.src, p))
            .unwrap_or_default();
        let is_async = {
            let mut cursor = def.walk();
            let first = def.children(&mut cursor).next();
            first.is_some_and(|c| c.kind() == "async")
        };
        let (statement_count, assert_count) = count_statements(body);

        if ctx.module_level {
            self.facts.bindings.push(ModuleBinding {
                name: name.clone(),
                target: qname.clone(),
                origin: BindingOrigin::Function,
                import_kind: None,
                line: start_line,
                conditional: ctx.conditional,
            });
        }

        let locals_prefix = format!("{qname}.<locals>");
        let scope = function_scope(self.src, def, body, &params, &locals_prefix, &self.package);
        self.collect_calls(body, &qname);

        self.facts.functions.push(FunctionDecl {
            qname: qname.clone(),
            name,
            header_text,
            body_text,
            source_text,
            docstring,
            span: Span {
                start: start_line,
                end: def.end_position().row + 1,
            },
            def_column,
            params,
            decorators,
            is_method: ctx.enclosing_class.is_some(),
            is_async,
            enclosing_class: ctx.enclosing_class.clone(),
            enclosing_function: ctx.enclosing_function.clone(),
            statement_count,
            assert_count,
            scope,
        });

        let inner = Ctx {
            prefix: locals_prefix,
            enclosing_class: None,
            enclosing_function: Some(qname),
            module_level: false,
            conditional: false,
        };
        self.visit_block(body, &inner);
    }

    fn body_text(&self, def: Node<'_>, body: Node<'_>, def_column: usize) -> String {
        let header_end_row = {
            let mut cursor = def.walk();
            let colon = def
                .children(&mut cursor)
                .filter(|c| c.kind() == ":" && c.end_byte() <= body.start_byte())
                .last();
            colon.map(|c| c.end_position().row).unwrap_or(def.start_position().row)
        };
        if body.start_position().row > header_end_row {
            let line_start = self.src[..body.start_byte()]
                .rfind('\n')
                .map(|i| i + 1)
                .unwrap_or(0);
            let first_after_header = self.line_start_after_row(header_end_row).min(line_start);
            pyast::dedent_all(&self.src[first_after_header..def.end_byte()], def_column)
        } else {
            self.text(body).to_string()
        }
    }

    fn line_start_after_row(&self, row: usize) -> usize {
        let mut idx = 0;
        for _ in 0..=row {
            match self.src[idx..].find('\n') {
                Some(i) => idx += i + 1,
                None => return self.src.len(),
            }
        }
        idx
    }

    fn class(&mut self, def: Node<'_>, ctx: &Ctx) {
        let Some(name_node) = def.child_by_field_name("name") else {
            return;
        };
        let name = self.text(name_node).to_string();
        let start_line = def.start_position().row + 1;
        let qname = self.unique_qname(format!("{}.{}", ctx.prefix, name), start_line);
        let bases = def
            .child_by_field_name("superclasses")
            .map(|args| {
                let mut cursor = args.walk();
                let v: Vec<String> = args
                    .named_children(&mut cursor)
                    .filter(|a| matches!(a.kind(), "identifier" | "attribute"))
                    .map(|a| self.text(a).to_string())
                    .collect();
                v
            })
            .unwrap_or_default();
        if ctx.module_level {
            self.facts.bindings.push(ModuleBinding {
                name: name.clone(),
                target: qname.clone(),
                origin: BindingOrigin::Class,
                import_kind: None,
                line: start_line,
                conditional: ctx.conditional,
            });
        }
        let class_index = self.facts.classes.len();
        self.facts.classes.push(ClassDecl {
            qname: qname.clone(),
            name,
            bases,
            methods: Vec::new(),
            span: Span {
                start: start_line,
                end: def.end_position().row + 1,
            },
            enclosing_function: ctx.enclosing_function.clone(),
        });
        if let Some(body) = def.child_by_field_name("body") {
            let inner = Ctx {
                prefix: qname.clone(),
                enclosing_class: Some(qname.clone()),
                enclosing_function: ctx.enclosing_function.clone(),
                module_level: false,
                conditional: false,
            };
            self.visit_block(body, &inner);
        }
        let methods = self
            .facts
            .functions
            .iter()
            .filter(|f| f.enclosing_class.as_deref() == Some(qname.as_str()))
            .map(|f| f.qname.clone())
            .collect();
        self.facts.classes[class_index].methods = methods;
    }

    fn collect_calls(&mut self, body: Node<'_>, caller: &str) {
        let mut calls = Vec::new();
        collect_call_nodes(body, &mut calls);
        for call in calls {
            let Some(function) = call.child_by_field_name("function") else {
                continue;
            };
            let chain = pyast::dotted_chain(self.src, function);
            let receiver_chain = chain
                .as_ref()
                .map(|c| c[..c.len().saturating_sub(1)].join("."))
                .unwrap_or_else(|| match function.kind() {
                    "attribute" => function
                        .child_by_field_name("object")
                        .map(|o| self.text(o).to_string())
                        .unwrap_or_default(),
                    _ => String::new(),
                });
            let arg_texts = call
                .child_by_field_name("arguments")
                .map(|args| {
                    if args.kind() == "generator_expression" {
                        return vec![self.text(args).to_string()];
                    }
                    let mut cursor = args.walk();
                    let v: Vec<String> = args
                        .named_children(&mut cursor)
                        .filter(|a| a.kind() != "comment")
                        .map(|a| pyast::node_text_dedented(self.src, a))
                        .collect();
                    v
                })
                .unwrap_or_default();
            let enclosing_statement_text = pyast::enclosing_statement(call)
                .map(|s| {
                    if pyast::is_simple_statement(s.kind()) {
                        pyast::node_text_dedented(self.src, s)
                    } else {
                        pyast::header_text(self.src, s)
                    }
                })
                .unwrap_or_default();
            self.facts.calls.push(CallSite {
                caller_qname: caller.to_string(),
                callee_expr_text: pyast::node_text_dedented(self.src, call),
                callee_chain: chain,
                receiver_chain,
                line: call.start_position().row + 1,
                column: call.start_position().column,
                enclosing_statement_text,
                arg_texts,
                resolved_callee: None,
            });
        }
    }
}

/// Call nodes in a function body, excluding nested def/class scopes but
/// including lambdas, in source order.
fn collect_call_nodes<'t>(node: Node<'t>, out: &mut Vec<Node<'t>>) {
    let mut cursor = node.walk();
    for child in node.children(&mut cursor) {
        if matches!(
            child.kind(),
            "function_definition" | "class_definition" | "decorated_definition"
        ) {
            continue;
        }
        if child.kind() == "call" {
            out.push(child);
        }
        collect_call_nodes(child, out);
    }
}

fn compound_blocks(stmt: Node<'_>) -> Vec<Node<'_>> {
    let mut out = Vec::new();
    let mut cursor = stmt.walk();
    for child in stmt.named_children(&mut cursor) {
        match child.kind() {
            "block" => out.push(child),
            "elif_clause" | "else_clause" | "except_clause" | "except_group_clause"
            | "finally_clause" => {
                let mut c2 = child.walk();
                out.extend(child.named_children(&mut c2).filter(|b| b.kind() == "block"));
            }
            _ => {}
        }
    }
    out
}

pub(crate) fn docstring_of(src: &str, body: Node<'_>) -> Option<String> {
    let mut cursor = body.walk();
    let first = body
        .named_children(&mut cursor)
        .find(|c| c.kind() != "comment")?;
    if first.kind() != "expression_statement" || first.named_child_count() != 1 {
        return None;
    }
    let expr = first.named_child(0)?;
    pyast::string_value(src, expr)
}

fn count_statements(body: Node<'_>) -> (usize, usize) {
    let mut total = 0;
    let mut asserts = 0;
    pyast::walk_scope(body, &mut |n| {
        if pyast::is_statement(n.kind()) {
            total += 1;
            if n.kind() == "assert_statement" {
                asserts += 1;
            }
        }
    });
    (total, asserts)
}

pub(crate) fn parse_params(src: &str, params: Node<'_>) -> Vec<Param> {
    let text = |n: Node<'_>| src[n.byte_range()].to_string();
    let mut out = Vec::new();
    let mut keyword_only = false;
    let mut cursor = params.walk();
    for p in params.named_children(&mut cursor) {
        let positional_kind = if keyword_only {
            ParamKind::KeywordOnly
        } else {
            ParamKind::Positional
        };
        match p.kind() {
            "identifier" => out.push(Param {
                name: text(p),
                annotation: None,
                default: None,
                kind: positional_kind,
            }),
            "default_parameter" | "typed_default_parameter" => {
                let name = p.child_by_field_name("name").map(text).unwrap_or_default();
                out.push(Param {
                    name,
                    annotation: p.child_by_field_name("type").map(text),
                    default: p.child_by_field_name("value").map(text),
                    kind: positional_kind,
                });
            }
            "typed_parameter" => {
                let annotation = p.child_by_field_name("type").map(text);
                let mut c2 = p.walk();
                let inner = p
                    .named_children(&mut c2)
                    .find(|c| c.kind() != "type");
                match inner {
                    Some(i) if i.kind() == "list_splat_pattern" => {
                        keyword_only = true;
                        out.push(Param {
                            name: splat_name(src, i),
                            annotation,
                            default: None,
                            kind: ParamKind::VarPositional,
                        });
                    }
                    Some(i) if i.kind() == "dictionary_splat_pattern" => out.push(Param {
                        name: splat_name(src, i),
                        annotation,
                        default: None,
                        kind: ParamKind::VarKeyword,
                    }),
                    Some(i) => out.push(Param {
                        name: text(i),
                        annotation,
                        default: None,
                        kind: positional_kind,
                    }),
                    None => {}
                }
            }
            "list_splat_pattern" => {
                keyword_only = true;
                out.push(Param {
                    name: splat_name(src, p),
                    annotation: None,
                    default: None,
                    kind: ParamKind::VarPositional,
                });
            }
            "dictionary_splat_pattern" => out.push(Param {
                name: splat_name(src, p),
                annotation: None,
                default: None,
                kind: ParamKind::VarKeyword,
            }),
            "keyword_separator" => keyword_only = true,
            _ => {}
        }
    }
    out
}

fn splat_name(src: &str, node: Node<'_>) -> String {
    let mut cursor = node.walk();
    let name = node
        .named_children(&mut cursor)
        .find(|c| c.kind() == "identifier")
        .map(|c| src[c.byte_range()].to_string())
        .unwrap_or_default();
    name
}

/// Import bindings introduced by one import statement, plus star-import
/// module names.
pub(crate) fn parse_import(
    src: &str,
    stmt: Node<'_>,
    package: &str,
    line: usize,
) -> (Vec<ImportBinding>, Vec<String>) {
    let text = |n: Node<'_>| src[n.byte_range()].split_whitespace().collect::<String>();
    let mut bindings = Vec::new();
    let mut stars = Vec::new();
    match stmt.kind() {
        "import_statement" => {
            let mut cursor = stmt.walk();
            for name in stmt.children_by_field_name("name", &mut cursor) {
                match name.kind() {
                    "dotted_name" => {
                        let full = text(name);
                        let head = full.split('.').next().unwrap_or(&full).to_string();
                        bindings.push(ImportBinding {
                            local_alias: head.clone(),
                            target_qname: head,
                            kind: ImportKind::Module,
                            line,
                            conditional: false,
                        });
                    }
                    "aliased_import" => {
                        if let (Some(n), Some(a)) = (
                            name.child_by_field_name("name"),
                            name.child_by_field_name("alias"),
                        ) {
                            bindings.push(ImportBinding {
                                local_alias: text(a),
                                target_qname: text(n),
                                kind: ImportKind::Module,
                                line,
                                conditional: false,
                            });
                        }
                    }
                    _ => {}
                }
            }
        }
        "import_from_statement" => {
            let Some(module) = stmt.child_by_field_name("module_name") else {
                return (bindings, stars);
            };
            let base = if module.kind() == "relative_import" {
                resolve_relative(src, module, package)
            } else {
                text(module)
            };
            let join = |name: &str| {
                if base.is_empty() {
                    name.to_string()
                } else {
                    format!("{base}.{name}")
                }
            };
            let mut cursor = stmt.walk();
            for name in stmt.children_by_field_name("name", &mut cursor) {
                match name.kind() {
                    "dotted_name" => {
                        let n = text(name);
                        bindings.push(ImportBinding {
                            local_alias: n.rsplit('.').next().unwrap_or(&n).to_string(),
                            target_qname: join(&n),
                            kind: ImportKind::Symbol,
                            line,
                            conditional: false,
                        });
                    }
                    "aliased_import" => {
                        if let (Some(n), Some(a)) = (
                            name.child_by_field_name("name"),
                            name.child_by_field_name("alias"),
                        ) {
                            bindings.push(ImportBinding {
                                local_alias: text(a),
                                target_qname: join(&text(n)),
                                kind: ImportKind::Symbol,
                                line,
                                conditional: false,
                            });
                        }
                    }
                    _ => {}
                }
            }
            let mut c2 = stmt.walk();
            if stmt
                .named_children(&mut c2)
                .any(|c| c.kind() == "wildcard_import")
                && !base.is_empty()
            {
                stars.push(base);
            }
        }
        _ => {}
    }
    (bindings, stars)
}

fn resolve_relative(src: &str, rel: Node<'_>, package: &str) -> String {
    let mut dots = 0;
    let mut tail = String::new();
    let mut cursor = rel.walk();
    for child in rel.named_children(&mut cursor) {
        match child.kind() {
            "import_prefix" => dots = src[child.byte_range()].matches('.').count(),
            "dotted_name" => tail = src[child.byte_range()].split_whitespace().collect(),
            _ => {}
        }
    }
    let mut parts: Vec<&str> = package.split('.').filter(|p| !p.is_empty()).collect();
    for _ in 1..dots {
        parts.pop();
    }
    let mut base = parts.join(".");
    if !tail.is_empty() {
        if !base.is_empty() {
            base.push('.');
        }
        base.push_str(&tail);
    }
    base
}

fn function_scope(
    src: &str,
    def: Node<'_>,
    body: Node<'_>,
    params: &[Param],
    locals_prefix: &str,
    package: &str,
) -> FunctionScope {
    let mut scope = FunctionScope::default();
    for p in params {
        if !p.name.is_empty() {
            scope.params.insert(p.name.clone());
            scope.locals.insert(p.name.clone());
        }
    }
    // candidates for constructor-typed locals; `None` poisons the name
    let mut constructed: BTreeMap<String, Option<Vec<String>>> = BTreeMap::new();
    for p in &scope.params {
        constructed.insert(p.clone(), None);
    }
    let _ = def;
    pyast::walk_scope(body, &mut |n| match n.kind() {
        "identifier" => {
            let role = pyast::identifier_role(n);
            if matches!(role, NameRole::Store | NameRole::LoadStore) {
                let name = src[n.byte_range()].to_string();
                scope.locals.insert(name.clone());
                let typed = n
                    .parent()
                    .filter(|p| p.kind() == "assignment" && role == NameRole::Store)
                    .filter(|p| p.child_by_field_name("left").map(|l| l.id()) == Some(n.id()))
                    .and_then(|p| p.child_by_field_name("right"))
                    .filter(|r| r.kind() == "call")
                    .and_then(|r| r.child_by_field_name("function"))
                    .and_then(|f| pyast::dotted_chain(src, f));
                match (constructed.get(&name), typed) {
                    (None, Some(chain)) => {
                        constructed.insert(name, Some(chain));
                    }
                    (Some(Some(prev)), Some(chain)) if *prev == chain => {}
                    _ => {
                        constructed.insert(name, None);
                    }
                }
            }
        }
        "import_statement" | "import_from_statement" => {
            let line = n.start_position().row + 1;
            let (bindings, _) = parse_import(src, n, package, line);
            for b in bindings {
                scope.locals.insert(b.local_alias.clone());
                constructed.insert(b.local_alias.clone(), None);
                scope.imports.insert(b.local_alias.clone(), b);
            }
        }
        "global_statement" | "nonlocal_statement" => {
            let mut cursor = n.walk();
            let names: Vec<String> = n
                .named_children(&mut cursor)
                .filter(|c| c.kind() == "identifier")
                .map(|c| src[c.byte_range()].to_string())
                .collect();
            let target = if n.kind() == "global_statement" {
                &mut scope.globals
            } else {
                &mut scope.nonlocals
            };
            target.extend(names);
        }
        "function_definition" | "class_definition" | "decorated_definition" => {
            if let Some(d) = pyast::unwrap_decorated(n) {
                if let Some(name) = d.child_by_field_name("name") {
                    let name = src[name.byte_range()].to_string();
                    scope.locals.insert(name.clone());
                    constructed.insert(name.clone(), None);
                    scope
                        .nested
                        .insert(name.clone(), format!("{locals_prefix}.{name}"));
                }
            }
        }
        _ => {}
    });
    for name in scope.globals.iter().chain(scope.nonlocals.iter()) {
        scope.locals.remove(name);
        constructed.remove(name);
    }
    scope.constructed = constructed
        .into_iter()
        .filter_map(|(k, v)| v.map(|chain| (k, chain)))
        .collect();
    scope
}
