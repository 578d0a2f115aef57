use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::facts::{BindingOrigin, CallSite, FileFacts, FunctionDecl};
use super::symbols::{build_symbol_table, ClassHierarchy, ClassNode, SymbolTable};
use crate::pyast;

const MAX_ALIAS_DEPTH: usize = 8;

/// Outcome of resolving one call site.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Resolution {
    Resolved { candidates: Vec<String> },
    External { target: String },
    Unresolved { reason: String },
}

impl Resolution {
    fn unresolved(reason: &str) -> Self {
        Resolution::Unresolved {
            reason: reason.to_string(),
        }
    }
}

/// What a dotted name denotes inside the repository.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Entity {
    Function(String),
    Class(String),
    Module(String),
    External(String),
    Unknown,
}

/// Repository-wide lookup structures shared by every per-file resolution.
#[derive(Debug, Clone)]
pub struct RepoIndex {
    pub tables: Vec<SymbolTable>,
    pub hierarchy: ClassHierarchy,
    functions: BTreeMap<String, usize>,
    modules: BTreeMap<String, usize>,
    /// Import name → module qnames reachable under that name from some
    /// source root.
    module_aliases: BTreeMap<String, Vec<String>>,
    top_level: BTreeSet<String>,
}

impl RepoIndex {
    pub fn build(all_facts: &[FileFacts]) -> Self {
        let tables: Vec<SymbolTable> = all_facts.iter().map(build_symbol_table).collect();
        let mut functions = BTreeMap::new();
        let mut modules = BTreeMap::new();
        for (i, facts) in all_facts.iter().enumerate() {
            modules.entry(facts.module_qname.clone()).or_insert(i);
            for f in &facts.functions {
                functions.entry(f.qname.clone()).or_insert(i);
            }
        }

        let packages: BTreeSet<String> = all_facts
            .iter()
            .filter(|f| f.is_package_init())
            .map(|f| f.module_qname.clone())
            .collect();
        let mut module_aliases: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for facts in all_facts {
            let parts: Vec<&str> = facts.module_qname.split('.').collect();
            for k in 0..parts.len() {
                // dropping k leading components is allowed only when the
                // directory they name is not itself a package
                if k > 0 && packages.contains(&parts[..k].join(".")) {
                    continue;
                }
                let alias = parts[k..].join(".");
                let slot = module_aliases.entry(alias).or_default();
                if !slot.contains(&facts.module_qname) {
                    slot.push(facts.module_qname.clone());
                }
            }
        }
        let top_level = module_aliases
            .keys()
            .map(|a| a.split('.').next().unwrap_or(a).to_string())
            .collect();

        let mut index = RepoIndex {
            tables,
            hierarchy: ClassHierarchy::default(),
            functions,
            modules,
            module_aliases,
            top_level,
        };
        index.hierarchy = index.build_hierarchy(all_facts);
        index
    }

    fn build_hierarchy(&self, all_facts: &[FileFacts]) -> ClassHierarchy {
        let class_names: BTreeSet<&str> = all_facts
            .iter()
            .flat_map(|f| f.classes.iter().map(|c| c.qname.as_str()))
            .collect();
        let mut h = ClassHierarchy::default();
        for (i, facts) in all_facts.iter().enumerate() {
            for class in &facts.classes {
                let mut node = ClassNode::default();
                for base in self.tables[i]
                    .class_bases
                    .get(&class.qname)
                    .into_iter()
                    .flatten()
                {
                    match self.canonicalize_with(base, 0, &|q| class_names.contains(q)) {
                        Entity::Class(q) => node.bases.push(q),
                        _ => node.external_bases.push(base.clone()),
                    }
                }
                for m in &class.methods {
                    if let Some(f) = facts.function(m) {
                        node.methods.entry(f.name.clone()).or_insert_with(|| m.clone());
                    }
                }
                h.insert(class.qname.clone(), node);
            }
        }
        h
    }

    pub fn file_of_function(&self, qname: &str) -> Option<usize> {
        self.functions.get(qname).copied()
    }

    /// Repository module for an import name: exact qname, or the unique module
    /// reachable under that name from a non-package source root.
    pub fn find_module(&self, name: &str) -> Option<&str> {
        if let Some((q, _)) = self.modules.get_key_value(name) {
            return Some(q.as_str());
        }
        match self.module_aliases.get(name).map(Vec::as_slice) {
            Some([only]) => Some(only.as_str()),
            _ => None,
        }
    }

    pub fn canonicalize(&self, qname: &str) -> Entity {
        self.canonicalize_with(qname, 0, &|q| self.hierarchy.contains(q))
    }

    fn canonicalize_with(&self, qname: &str, depth: usize, is_class: &dyn Fn(&str) -> bool) -> Entity {
        if depth > MAX_ALIAS_DEPTH || qname.is_empty() {
            return Entity::Unknown;
        }
        if self.functions.contains_key(qname) {
            return Entity::Function(qname.to_string());
        }
        if is_class(qname) {
            return Entity::Class(qname.to_string());
        }
        if let Some(m) = self.find_module(qname) {
            return Entity::Module(m.to_string());
        }
        let parts: Vec<&str> = qname.split('.').collect();
        for cut in (1..parts.len()).rev() {
            let prefix = parts[..cut].join(".");
            let rest = &parts[cut..];
            if is_class(&prefix) {
                if rest.len() == 1 {
                    return match self.hierarchy.lookup_method(&prefix, rest[0]) {
                        Some(m) => Entity::Function(m),
                        None => Entity::Unknown,
                    };
                }
                return Entity::Unknown;
            }
            let Some(module) = self.find_module(&prefix) else {
                continue;
            };
            let Some(&file) = self.modules.get(module) else {
                continue;
            };
            let table = &self.tables[file];
            let tail = rest[1..].join(".");
            let join = |base: &str| {
                if tail.is_empty() {
                    base.to_string()
                } else {
                    format!("{base}.{tail}")
                }
            };
            if let Some(sym) = table.lookup(rest[0]).last() {
                if sym.origin == BindingOrigin::Global {
                    return Entity::Unknown;
                }
                let next = join(&sym.target);
                if next == qname {
                    return Entity::Unknown;
                }
                return self.canonicalize_with(&next, depth + 1, is_class);
            }
            for star in &table.star_imports {
                let next = format!("{star}.{}", rest.join("."));
                match self.canonicalize_with(&next, depth + 1, is_class) {
                    Entity::Unknown | Entity::External(_) => continue,
                    found => return found,
                }
            }
            return Entity::Unknown;
        }
        let head = parts[0];
        if self.top_level.contains(head) {
            Entity::Unknown
        } else {
            Entity::External(qname.to_string())
        }
    }
}

/// Resolves call sites of one file against the repository index.
pub struct Resolver<'a> {
    pub index: &'a RepoIndex,
    pub facts: &'a FileFacts,
    pub table: &'a SymbolTable,
}

/// Intermediate lookup result for a dotted name.
enum Lookup {
    Entities(Vec<Entity>),
    SelfMethod { class: String, rest: Vec<String> },
    SuperMethod { class: String, rest: Vec<String> },
    Constructed { class_chain: Vec<String>, scope: String, rest: Vec<String> },
    Dynamic(&'static str),
}

impl<'a> Resolver<'a> {
    pub fn new(index: &'a RepoIndex, facts: &'a FileFacts, file: usize) -> Self {
        Resolver {
            index,
            facts,
            table: &index.tables[file],
        }
    }

    pub fn resolve_call(&self, site: &CallSite) -> Resolution {
        let Some(chain) = site.callee_chain.as_ref() else {
            return Resolution::unresolved("computed callee");
        };
        let Some(caller) = self.facts.function(&site.caller_qname) else {
            return Resolution::unresolved("caller not found");
        };
        let lookup = self.lookup(Some(caller), chain);
        self.lookup_to_resolution(lookup)
    }

    fn lookup_to_resolution(&self, lookup: Lookup) -> Resolution {
        let h = &self.index.hierarchy;
        match lookup {
            Lookup::Dynamic(reason) => Resolution::unresolved(reason),
            Lookup::SelfMethod { class, rest } => {
                if rest.len() != 1 {
                    return Resolution::unresolved("attribute chain on self");
                }
                match h.lookup_method(&class, &rest[0]) {
                    Some(m) => Resolution::Resolved {
                        candidates: vec![m],
                    },
                    None if h.has_external_ancestor(&class) => Resolution::External {
                        target: format!("{class}.{}", rest[0]),
                    },
                    None => Resolution::unresolved("attribute is not a method"),
                }
            }
            Lookup::SuperMethod { class, rest } => {
                if rest.len() != 1 {
                    return Resolution::unresolved("attribute chain on super()");
                }
                match h.lookup_super(&class, &rest[0]) {
                    Some(m) => Resolution::Resolved {
                        candidates: vec![m],
                    },
                    None => Resolution::External {
                        target: format!("super().{}", rest[0]),
                    },
                }
            }
            Lookup::Constructed {
                class_chain,
                scope,
                rest,
            } => {
                let scope_fn = self.facts.function(&scope);
                match self.lookup(scope_fn, &class_chain) {
                    Lookup::Entities(entities) => {
                        let mut candidates = Vec::new();
                        let mut external = None;
                        for e in entities {
                            match e {
                                Entity::Class(c) if rest.len() == 1 => {
                                    if let Some(m) = h.lookup_method(&c, &rest[0]) {
                                        candidates.push(m);
                                    } else if h.has_external_ancestor(&c) {
                                        external = Some(format!("{c}.{}", rest[0]));
                                    }
                                }
                                Entity::External(t) => {
                                    external = Some(format!("{t}().{}", rest.join(".")))
                                }
                                _ => {}
                            }
                        }
                        finish(candidates, external, "receiver type unknown")
                    }
                    _ => Resolution::unresolved("receiver type unknown"),
                }
            }
            Lookup::Entities(entities) => {
                let mut candidates = Vec::new();
                let mut external = None;
                let mut reason = "unresolved target";
                for e in entities {
                    match e {
                        Entity::Function(q) => candidates.push(q),
                        Entity::Class(c) => match h.lookup_method(&c, "__init__") {
                            Some(init) => candidates.push(init),
                            None if h.has_external_ancestor(&c) => {
                                external = Some(format!("{c}.__init__"))
                            }
                            None => reason = "class without __init__",
                        },
                        Entity::External(t) => external = Some(t),
                        Entity::Module(_) => reason = "module is not callable",
                        Entity::Unknown => {}
                    }
                }
                finish(candidates, external, reason)
            }
        }
    }

    fn lookup(&self, caller: Option<&FunctionDecl>, chain: &[String]) -> Lookup {
        let head = chain[0].as_str();
        let rest: Vec<String> = chain[1..].to_vec();

        if head == "super()" {
            return match caller.and_then(|c| self.method_class(c)) {
                Some(class) => Lookup::SuperMethod { class, rest },
                None => Lookup::Dynamic("super() outside a method"),
            };
        }

        // lexical function scopes, innermost first
        let mut scope = caller;
        while let Some(func) = scope {
            if func.scope.globals.contains(head) {
                break;
            }
            if func.is_method
                && func.params.first().is_some_and(|p| p.name == head)
                && !rest.is_empty()
            {
                if let Some(class) = func.enclosing_class.clone() {
                    if !func.decorators.iter().any(|d| d == "staticmethod") {
                        return Lookup::SelfMethod { class, rest };
                    }
                }
            }
            if func.scope.locals.contains(head) {
                if let Some(q) = func.scope.nested.get(head) {
                    return Lookup::Entities(vec![self.index.canonicalize(&join(q, &rest))]);
                }
                if let Some(imp) = func.scope.imports.get(head) {
                    return Lookup::Entities(vec![self
                        .index
                        .canonicalize(&join(&imp.target_qname, &rest))]);
                }
                if let Some(ctor) = func.scope.constructed.get(head) {
                    if rest.len() == 1 {
                        return Lookup::Constructed {
                            class_chain: ctor.clone(),
                            scope: func.qname.clone(),
                            rest,
                        };
                    }
                }
                if func.scope.params.contains(head) {
                    return Lookup::Dynamic("first-class value");
                }
                return Lookup::Dynamic("dynamic local");
            }
            scope = func
                .enclosing_function
                .as_deref()
                .and_then(|q| self.facts.function(q));
        }

        let symbols = self.table.lookup(head);
        if !symbols.is_empty() {
            let mut entities = Vec::new();
            for sym in symbols {
                if sym.origin == BindingOrigin::Global {
                    continue;
                }
                entities.push(self.index.canonicalize(&join(&sym.target, &rest)));
            }
            if entities.is_empty() {
                return Lookup::Dynamic("rebound global");
            }
            return Lookup::Entities(entities);
        }
        for star in &self.table.star_imports {
            let e = self
                .index
                .canonicalize(&format!("{star}.{}", chain.join(".")));
            if matches!(e, Entity::Function(_) | Entity::Class(_)) {
                return Lookup::Entities(vec![e]);
            }
        }
        if pyast::is_builtin(head) {
            return Lookup::Entities(vec![Entity::External(format!("builtins.{}", chain.join(".")))]);
        }
        Lookup::Dynamic("unbound name")
    }

    fn method_class(&self, func: &FunctionDecl) -> Option<String> {
        let mut cur = Some(func);
        while let Some(f) = cur {
            if let Some(c) = &f.enclosing_class {
                return Some(c.clone());
            }
            cur = f
                .enclosing_function
                .as_deref()
                .and_then(|q| self.facts.function(q));
        }
        None
    }
}

fn join(base: &str, rest: &[String]) -> String {
    if rest.is_empty() {
        base.to_string()
    } else {
        format!("{base}.{}", rest.join("."))
    }
}

fn finish(mut candidates: Vec<String>, external: Option<String>, reason: &str) -> Resolution {
    let mut seen = BTreeSet::new();
    candidates.retain(|c| seen.insert(c.clone()));
    if !candidates.is_empty() {
        Resolution::Resolved { candidates }
    } else if let Some(target) = external {
        Resolution::External { target }
    } else {
        Resolution::unresolved(reason)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::parse::parse_file;

    fn repo(files: &[(&str, &str)]) -> Vec<FileFacts> {
        files
            .iter()
            .map(|(p, s)| parse_file(s, p).unwrap())
            .collect()
    }

    fn resolve_all(files: &[(&str, &str)]) -> Vec<(String, String, Resolution)> {
        let facts = repo(files);
        let index = RepoIndex::build(&facts);
        let mut out = Vec::new();
        for (i, f) in facts.iter().enumerate() {
            let r = Resolver::new(&index, f, i);
            for site in &f.calls {
                out.push((
                    site.caller_qname.clone(),
                    site.callee_expr_text.clone(),
                    r.resolve_call(site),
                ));
            }
        }
        out
    }

    fn resolved(q: &str) -> Resolution {
        Resolution::Resolved {
            candidates: vec![q.to_string()],
        }
    }

    #[test]
    fn local_definition() {
        let got = resolve_all(&[("m.py", "def g(x):\n    pass\n\ndef h():\n    g(1)\n")]);
        assert_eq!(got[0].2, resolved("m.g"));
    }

    #[test]
    fn inherited_method_through_two_levels() {
        let got = resolve_all(&[
            ("pkg/base.py", "class A:\n    def m(self):\n        pass\n"),
            (
                "pkg/mid.py",
                "from pkg.base import A\n\nclass B(A):\n    def run(self):\n        self.m()\n",
            ),
            (
                "pkg/leaf.py",
                "from .mid import B\n\nclass C(B):\n    def go(self):\n        self.m()\n        super().run()\n",
            ),
        ]);
        assert_eq!(got[0].2, resolved("pkg.base.A.m"));
        assert_eq!(got[1].2, resolved("pkg.base.A.m"));
        assert_eq!(got[2].2, resolved("pkg.mid.B.run"));
    }

    #[test]
    fn parameter_calls_are_unresolved() {
        let got = resolve_all(&[("m.py", "def run(handler):\n    handler()\n")]);
        assert_eq!(got[0].2, Resolution::unresolved("first-class value"));
    }

    #[test]
    fn external_and_builtin_targets() {
        let got = resolve_all(&[(
            "m.py",
            "import numpy as np\n\ndef f(x):\n    np.sum(x)\n    len(x)\n    mystery(x)\n",
        )]);
        assert_eq!(
            got[0].2,
            Resolution::External {
                target: "numpy.sum".into()
            }
        );
        assert!(matches!(got[1].2, Resolution::External { .. }));
        assert_eq!(got[2].2, Resolution::unresolved("unbound name"));
    }

    #[test]
    fn cross_module_aliases_and_reexports() {
        let got = resolve_all(&[
            ("utils/__init__.py", "from .impl import foo\n"),
            ("utils/impl.py", "def foo():\n    pass\n"),
            (
                "app.py",
                "from utils import foo as bar\nimport utils.impl as ui\nimport utils\n\ndef main():\n    bar()\n    ui.foo()\n    utils.impl.foo()\n",
            ),
        ]);
        for (_, _, r) in &got {
            assert_eq!(*r, resolved("utils.impl.foo"));
        }
    }

    #[test]
    fn constructor_typed_locals_and_constructors() {
        let got = resolve_all(&[(
            "m.py",
            "class Svc:\n    def __init__(self):\n        pass\n    def run(self):\n        pass\n\ndef main():\n    s = Svc()\n    s.run()\n",
        )]);
        assert_eq!(got[0].2, resolved("m.Svc.__init__"));
        assert_eq!(got[1].2, resolved("m.Svc.run"));
    }

    #[test]
    fn nested_closures_resolve_lexically() {
        let got = resolve_all(&[(
            "m.py",
            "def outer():\n    def helper():\n        pass\n    def inner():\n        helper()\n    inner()\n",
        )]);
        let inner_call = got.iter().find(|(c, _, _)| c == "m.outer.<locals>.inner").unwrap();
        assert_eq!(inner_call.2, resolved("m.outer.<locals>.helper"));
        let outer_call = got.iter().find(|(c, _, _)| c == "m.outer").unwrap();
        assert_eq!(outer_call.2, resolved("m.outer.<locals>.inner"));
    }

    #[test]
    fn conditional_imports_are_ambiguous() {
        let got = resolve_all(&[
            ("a.py", "def f():\n    pass\n"),
            ("b.py", "def f():\n    pass\n"),
            (
                "c.py",
                "try:\n    from a import f\nexcept ImportError:\n    from b import f\n\ndef g():\n    f()\n",
            ),
        ]);
        assert_eq!(
            got[0].2,
            Resolution::Resolved {
                candidates: vec!["a.f".into(), "b.f".into()]
            }
        );
    }

    #[test]
    fn src_layout_imports() {
        let got = resolve_all(&[
            ("src/pkg/__init__.py", ""),
            ("src/pkg/util.py", "def helper():\n    pass\n"),
            (
                "src/pkg/main.py",
                "from pkg.util import helper\n\ndef run():\n    helper()\n",
            ),
        ]);
        assert_eq!(got[0].2, resolved("src.pkg.util.helper"));
    }
}
