use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::facts::{BindingOrigin, FileFacts, ImportKind};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Symbol {
    pub target: String,
    pub origin: BindingOrigin,
    pub import_kind: Option<ImportKind>,
    pub line: usize,
    pub conditional: bool,
}

/// Per-file table of module-level names. A name maps to every binding that
/// may be live at the end of module execution: an unconditional binding
/// shadows everything before it, conditional ones accumulate.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SymbolTable {
    pub module_qname: String,
    pub entries: BTreeMap<String, Vec<Symbol>>,
    pub star_imports: Vec<String>,
    /// Class qname → base expressions expanded through this table.
    pub class_bases: BTreeMap<String, Vec<String>>,
}

impl SymbolTable {
    pub fn lookup(&self, name: &str) -> &[Symbol] {
        self.entries.get(name).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Expand the head of a dotted expression through the table, using the
    /// last live binding. Unbound heads are returned unchanged.
    pub fn expand_dotted(&self, dotted: &str) -> String {
        let (head, rest) = match dotted.split_once('.') {
            Some((h, r)) => (h, Some(r)),
            None => (dotted, None),
        };
        match self.lookup(head).last() {
            Some(sym) => match rest {
                Some(r) => format!("{}.{}", sym.target, r),
                None => sym.target.clone(),
            },
            None => dotted.to_string(),
        }
    }
}

pub fn build_symbol_table(facts: &FileFacts) -> SymbolTable {
    let mut entries: BTreeMap<String, Vec<Symbol>> = BTreeMap::new();
    for b in &facts.bindings {
        let slot = entries.entry(b.name.clone()).or_default();
        if !b.conditional {
            slot.clear();
        }
        slot.push(Symbol {
            target: b.target.clone(),
            origin: b.origin,
            import_kind: b.import_kind,
            line: b.line,
            conditional: b.conditional,
        });
    }
    let mut table = SymbolTable {
        module_qname: facts.module_qname.clone(),
        entries,
        star_imports: facts.star_imports.clone(),
        class_bases: BTreeMap::new(),
    };
    for class in &facts.classes {
        let bases = class
            .bases
            .iter()
            .map(|b| expand_base(&table, facts, class.enclosing_function.as_deref(), b))
            .collect();
        table.class_bases.insert(class.qname.clone(), bases);
    }
    table
}

fn expand_base(
    table: &SymbolTable,
    facts: &FileFacts,
    enclosing_function: Option<&str>,
    base: &str,
) -> String {
    // classes defined inside a function see that function's nested names first
    let mut scope = enclosing_function;
    let head = base.split('.').next().unwrap_or(base);
    while let Some(fq) = scope {
        let Some(f) = facts.function(fq) else { break };
        if let Some(q) = f.scope.nested.get(head) {
            return match base.split_once('.') {
                Some((_, rest)) => format!("{q}.{rest}"),
                None => q.clone(),
            };
        }
        if let Some(imp) = f.scope.imports.get(head) {
            return match base.split_once('.') {
                Some((_, rest)) => format!("{}.{rest}", imp.target_qname),
                None => imp.target_qname.clone(),
            };
        }
        scope = f.enclosing_function.as_deref();
    }
    table.expand_dotted(base)
}

/// Repository-wide class graph with method tables.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassHierarchy {
    classes: BTreeMap<String, ClassNode>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassNode {
    /// Bases that resolved to repository classes, in declaration order.
    pub bases: Vec<String>,
    /// Bases that could not be mapped to a repository class.
    pub external_bases: Vec<String>,
    /// Method name → method qname, for methods defined directly on the class.
    pub methods: BTreeMap<String, String>,
}

impl ClassHierarchy {
    pub fn insert(&mut self, qname: String, node: ClassNode) {
        self.classes.insert(qname, node);
    }

    pub fn contains(&self, qname: &str) -> bool {
        self.classes.contains_key(qname)
    }

    pub fn get(&self, qname: &str) -> Option<&ClassNode> {
        self.classes.get(qname)
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    /// Method resolution order. Uses C3 linearization and falls back to a
    /// left-to-right depth-first walk when the hierarchy is inconsistent.
    pub fn mro(&self, qname: &str) -> Vec<String> {
        let mut visiting = BTreeSet::new();
        self.c3(qname, &mut visiting)
            .unwrap_or_else(|| self.dfs_order(qname))
    }

    fn c3(&self, qname: &str, visiting: &mut BTreeSet<String>) -> Option<Vec<String>> {
        if !visiting.insert(qname.to_string()) {
            return None;
        }
        let bases = self
            .classes
            .get(qname)
            .map(|c| c.bases.clone())
            .unwrap_or_default();
        let mut seqs: Vec<Vec<String>> = Vec::new();
        for b in &bases {
            seqs.push(self.c3(b, visiting)?);
        }
        seqs.push(bases);
        visiting.remove(qname);
        let mut out = vec![qname.to_string()];
        loop {
            seqs.retain(|s| !s.is_empty());
            if seqs.is_empty() {
                return Some(out);
            }
            let candidate = seqs.iter().map(|s| &s[0]).find(|head| {
                !seqs
                    .iter()
                    .any(|s| s[1..].iter().any(|x| x == *head))
            })?;
            let candidate = candidate.clone();
            for s in seqs.iter_mut() {
                if s[0] == candidate {
                    s.remove(0);
                }
            }
            out.push(candidate);
        }
    }

    fn dfs_order(&self, qname: &str) -> Vec<String> {
        let mut out = Vec::new();
        let mut stack = vec![qname.to_string()];
        while let Some(c) = stack.pop() {
            if out.contains(&c) {
                continue;
            }
            if let Some(node) = self.classes.get(&c) {
                for b in node.bases.iter().rev() {
                    stack.push(b.clone());
                }
            }
            out.push(c);
        }
        out
    }

    /// Nearest definition of `method` along the MRO of `class`.
    pub fn lookup_method(&self, class: &str, method: &str) -> Option<String> {
        self.mro(class)
            .iter()
            .find_map(|c| self.classes.get(c)?.methods.get(method).cloned())
    }

    /// Like [`lookup_method`](Self::lookup_method) but starting after `class`
    /// in its own MRO, as `super()` does.
    pub fn lookup_super(&self, class: &str, method: &str) -> Option<String> {
        self.mro(class)
            .iter()
            .skip(1)
            .find_map(|c| self.classes.get(c)?.methods.get(method).cloned())
    }

    /// Whether any class on the MRO has a base outside the repository.
    pub fn has_external_ancestor(&self, class: &str) -> bool {
        self.mro(class).iter().any(|c| {
            self.classes
                .get(c)
                .is_some_and(|n| n.external_bases.iter().any(|b| b != "object"))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::parse::parse_file;

    #[test]
    fn local_definition() {
        let facts = parse_file("def g():\n    pass\n", "m.py").unwrap();
        let t = build_symbol_table(&facts);
        assert_eq!(t.lookup("g")[0].target, "m.g");
        assert_eq!(t.lookup("g")[0].origin, BindingOrigin::Function);
    }

    #[test]
    fn from_import_alias() {
        let facts = parse_file("from x import y as z\n", "m.py").unwrap();
        let t = build_symbol_table(&facts);
        assert_eq!(t.lookup("z")[0].target, "x.y");
    }

    #[test]
    fn imported_base_class() {
        let facts = parse_file("from pkg.base import A\n\nclass B(A):\n    pass\n", "m.py").unwrap();
        let t = build_symbol_table(&facts);
        assert_eq!(t.class_bases["m.B"], vec!["pkg.base.A".to_string()]);
    }

    #[test]
    fn shadowing_and_conditional_bindings() {
        let src = "def f(): pass\nfrom a import f\ntry:\n    import json\nexcept ImportError:\n    import simplejson as json\n";
        let facts = parse_file(src, "m.py").unwrap();
        let t = build_symbol_table(&facts);
        let f: Vec<_> = t.lookup("f").iter().map(|s| s.target.as_str()).collect();
        assert_eq!(f, vec!["a.f"]);
        let json: Vec<_> = t.lookup("json").iter().map(|s| s.target.as_str()).collect();
        assert_eq!(json, vec!["json", "simplejson"]);
    }

    fn node(bases: &[&str], methods: &[&str], owner: &str) -> ClassNode {
        ClassNode {
            bases: bases.iter().map(|s| s.to_string()).collect(),
            external_bases: Vec::new(),
            methods: methods
                .iter()
                .map(|m| (m.to_string(), format!("{owner}.{m}")))
                .collect(),
        }
    }

    #[test]
    fn c3_diamond() {
        let mut h = ClassHierarchy::default();
        h.insert("O".into(), node(&[], &["m"], "O"));
        h.insert("A".into(), node(&["O"], &[], "A"));
        h.insert("B".into(), node(&["O"], &["m"], "B"));
        h.insert("C".into(), node(&["A", "B"], &[], "C"));
        assert_eq!(h.mro("C"), vec!["C", "A", "B", "O"]);
        assert_eq!(h.lookup_method("C", "m").as_deref(), Some("B.m"));
        assert_eq!(h.lookup_super("B", "m").as_deref(), Some("O.m"));
    }

    #[test]
    fn inconsistent_hierarchy_falls_back_to_dfs() {
        let mut h = ClassHierarchy::default();
        h.insert("X".into(), node(&[], &[], "X"));
        h.insert("Y".into(), node(&["X"], &[], "Y"));
        // X before Y contradicts Y's own linearization
        h.insert("Z".into(), node(&["X", "Y"], &["z"], "Z"));
        assert_eq!(h.mro("Z"), vec!["Z", "X", "Y"]);
    }
}
