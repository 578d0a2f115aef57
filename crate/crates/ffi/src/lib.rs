//! C ABI for callerkit: call-graph extraction behind an opaque handle, the
//! pass@k estimator, similarity metrics, and instance serialization.
//!
//! Every fallible function returns a [`CkStatus`]; on failure the message is
//! available from [`ck_last_error`] on the same thread. Strings returned
//! through out-parameters are owned by the caller and released with
//! [`ck_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use callerkit::analysis::{extract_repo, CallGraph};
use callerkit::metrics::{codebleu, rouge_l_text, CodeBleuWeights};
use callerkit::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CkStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Domain = 3,
    Io = 4,
    Parse = 5,
    EmptyReference = 6,
    Panic = 7,
}

/// Opaque call graph.
pub struct CkCallGraph {
    graph: CallGraph,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

fn fail(status: CkStatus, msg: impl Into<String>) -> CkStatus {
    set_error(msg);
    status
}

fn status_of(e: &Error) -> CkStatus {
    match e {
        Error::Io { .. } | Error::Fetch { .. } | Error::RevisionNotFound { .. } => CkStatus::Io,
        Error::ParseFailure(_) | Error::Syntax { .. } | Error::Decode { .. } | Error::FragmentParse(_) => {
            CkStatus::Parse
        }
        Error::EmptyReference => CkStatus::EmptyReference,
        _ => CkStatus::Domain,
    }
}

fn guard(f: impl FnOnce() -> CkStatus) -> CkStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(CkStatus::Panic, "internal panic"),
    }
}

/// # Safety
/// `p` is null or a valid NUL-terminated string.
unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, CkStatus> {
    if p.is_null() {
        return Err(fail(CkStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(CkStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

fn into_c(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).map(CString::into_raw).unwrap_or(std::ptr::null_mut())
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn ck_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn ck_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Release a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` is null or came from this library and was not freed before.
#[no_mangle]
pub unsafe extern "C" fn ck_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Extract the call graph of the repository at `root`.
///
/// # Safety
/// `root` is a NUL-terminated path; `out` points to writable storage.
#[no_mangle]
pub unsafe extern "C" fn ck_graph_extract(root: *const c_char, out: *mut *mut CkCallGraph) -> CkStatus {
    guard(|| {
        if out.is_null() {
            return fail(CkStatus::NullPointer, "out is null");
        }
        let root = match read_str(root, "root") {
            Ok(r) => r,
            Err(s) => return s,
        };
        match extract_repo(Path::new(root)) {
            Ok((_, graph)) => {
                *out = Box::into_raw(Box::new(CkCallGraph { graph }));
                CkStatus::Ok
            }
            Err(e) => fail(status_of(&e), e.to_string()),
        }
    })
}

/// # Safety
/// `g` is null or a handle from [`ck_graph_extract`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ck_graph_free(g: *mut CkCallGraph) {
    if !g.is_null() {
        drop(Box::from_raw(g));
    }
}

/// Number of function nodes; 0 for a null handle.
///
/// # Safety
/// `g` is null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ck_graph_node_count(g: *const CkCallGraph) -> usize {
    g.as_ref().map_or(0, |g| g.graph.nodes.len())
}

/// Number of call edges; 0 for a null handle.
///
/// # Safety
/// `g` is null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ck_graph_edge_count(g: *const CkCallGraph) -> usize {
    g.as_ref().map_or(0, |g| g.graph.edges.len())
}

/// JSON array of the direct callers of `target` (qname, module path, text).
///
/// # Safety
/// `g` is a live handle, `target` a NUL-terminated string, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ck_graph_callers_json(
    g: *const CkCallGraph,
    target: *const c_char,
    out: *mut *mut c_char,
) -> CkStatus {
    guard(|| {
        let Some(g) = g.as_ref() else {
            return fail(CkStatus::NullPointer, "graph is null");
        };
        if out.is_null() {
            return fail(CkStatus::NullPointer, "out is null");
        }
        let target = match read_str(target, "target") {
            Ok(t) => t,
            Err(s) => return s,
        };
        let callers: Vec<_> = g
            .graph
            .direct_callers(target)
            .iter()
            .map(|c| {
                serde_json::json!({
                    "qname": c.qname,
                    "module_path": c.module_path,
                    "line": c.decl.span.start,
                    "text": c.text(),
                    "ambiguous": c.ambiguous,
                })
            })
            .collect();
        *out = into_c(serde_json::Value::Array(callers).to_string());
        CkStatus::Ok
    })
}

/// Unbiased pass@k estimate for `c` correct out of `n` samples.
///
/// # Safety
/// `out` points to writable storage.
#[no_mangle]
pub unsafe extern "C" fn ck_pass_at_k(n: usize, c: usize, k: usize, out: *mut f64) -> CkStatus {
    guard(|| {
        if out.is_null() {
            return fail(CkStatus::NullPointer, "out is null");
        }
        match callerkit::eval::pass_at_k(n, c, k) {
            Ok(p) => {
                *out = p;
                CkStatus::Ok
            }
            Err(e) => fail(status_of(&e), e.to_string()),
        }
    })
}

/// ROUGE-L F1 between candidate and reference code.
///
/// # Safety
/// Both strings are NUL-terminated; `out` points to writable storage.
#[no_mangle]
pub unsafe extern "C" fn ck_rouge_l(candidate: *const c_char, reference: *const c_char, out: *mut f64) -> CkStatus {
    guard(|| {
        if out.is_null() {
            return fail(CkStatus::NullPointer, "out is null");
        }
        let (c, r) = match (read_str(candidate, "candidate"), read_str(reference, "reference")) {
            (Ok(c), Ok(r)) => (c, r),
            (Err(s), _) | (_, Err(s)) => return s,
        };
        match rouge_l_text(c, r) {
            Ok(s) => {
                *out = s.f1;
                CkStatus::Ok
            }
            Err(e) => fail(status_of(&e), e.to_string()),
        }
    })
}

/// CodeBLEU with equal component weights.
///
/// # Safety
/// Both strings are NUL-terminated; `out` points to writable storage.
#[no_mangle]
pub unsafe extern "C" fn ck_codebleu(candidate: *const c_char, reference: *const c_char, out: *mut f64) -> CkStatus {
    guard(|| {
        if out.is_null() {
            return fail(CkStatus::NullPointer, "out is null");
        }
        let (c, r) = match (read_str(candidate, "candidate"), read_str(reference, "reference")) {
            (Ok(c), Ok(r)) => (c, r),
            (Err(s), _) | (_, Err(s)) => return s,
        };
        match codebleu(c, r, &CodeBleuWeights::default()) {
            Ok(s) => {
                *out = s.score;
                CkStatus::Ok
            }
            Err(e) => fail(status_of(&e), e.to_string()),
        }
    })
}

/// Serialize a header, `n_callers` caller snippets, and a docstring into the
/// marker template.
///
/// # Safety
/// `header` and `docstring` are NUL-terminated; `callers` holds `n_callers`
/// NUL-terminated strings (may be null when `n_callers` is 0); `out` is
/// writable.
#[no_mangle]
pub unsafe extern "C" fn ck_serialize(
    header: *const c_char,
    callers: *const *const c_char,
    n_callers: usize,
    docstring: *const c_char,
    out: *mut *mut c_char,
) -> CkStatus {
    guard(|| {
        if out.is_null() {
            return fail(CkStatus::NullPointer, "out is null");
        }
        let (h, d) = match (read_str(header, "header"), read_str(docstring, "docstring")) {
            (Ok(h), Ok(d)) => (h, d),
            (Err(s), _) | (_, Err(s)) => return s,
        };
        if n_callers > 0 && callers.is_null() {
            return fail(CkStatus::NullPointer, "callers is null");
        }
        let mut texts = Vec::with_capacity(n_callers);
        for i in 0..n_callers {
            match read_str(*callers.add(i), "caller") {
                Ok(t) => texts.push(t.to_string()),
                Err(s) => return s,
            }
        }
        *out = into_c(callerkit::corpus::serialize(h, &texts, d));
        CkStatus::Ok
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(s: &str) -> CString {
        CString::new(s).unwrap()
    }

    fn last_error() -> String {
        unsafe { CStr::from_ptr(ck_last_error()) }.to_string_lossy().into_owned()
    }

    #[test]
    fn pass_at_k_and_errors() {
        let mut v = 0.0;
        assert_eq!(unsafe { ck_pass_at_k(5, 2, 3, &mut v) }, CkStatus::Ok);
        assert!((v - 0.9).abs() < 1e-12);
        assert!(ck_last_error().is_null());
        assert_eq!(unsafe { ck_pass_at_k(2, 3, 1, &mut v) }, CkStatus::Domain);
        assert!(last_error().contains("pass@k"));
        assert_eq!(unsafe { ck_pass_at_k(2, 1, 1, std::ptr::null_mut()) }, CkStatus::NullPointer);
    }

    #[test]
    fn metrics() {
        let mut v = 0.0;
        let (a, b) = (c("x = a + b"), c("x = a + b"));
        assert_eq!(unsafe { ck_codebleu(a.as_ptr(), b.as_ptr(), &mut v) }, CkStatus::Ok);
        assert!((v - 1.0).abs() < 1e-6);
        assert_eq!(unsafe { ck_rouge_l(a.as_ptr(), b.as_ptr(), &mut v) }, CkStatus::Ok);
        assert_eq!(v, 1.0);
        let empty = c("");
        assert_eq!(unsafe { ck_rouge_l(a.as_ptr(), empty.as_ptr(), &mut v) }, CkStatus::EmptyReference);
        assert_eq!(unsafe { ck_rouge_l(std::ptr::null(), b.as_ptr(), &mut v) }, CkStatus::NullPointer);
    }

    #[test]
    fn serialize_round() {
        let h = c("def f(x):");
        let callers = [c("def g():\n    f(1)")];
        let ptrs: Vec<*const c_char> = callers.iter().map(|s| s.as_ptr()).collect();
        let d = c("Doc.");
        let mut out = std::ptr::null_mut();
        assert_eq!(unsafe { ck_serialize(h.as_ptr(), ptrs.as_ptr(), 1, d.as_ptr(), &mut out) }, CkStatus::Ok);
        let s = unsafe { CStr::from_ptr(out) }.to_str().unwrap().to_string();
        unsafe { ck_string_free(out) };
        assert_eq!(s, "<func>\ndef f(x):\n<calledby>\ndef g():\n    f(1)\n<docstring>\nDoc.\n");
    }

    #[test]
    fn graph_handle() {
        let dir = tempfile_dir();
        std::fs::write(dir.join("a.py"), "def f():\n    return 1\n\ndef g():\n    return f()\n").unwrap();
        let root = c(dir.to_str().unwrap());
        let mut g = std::ptr::null_mut();
        assert_eq!(unsafe { ck_graph_extract(root.as_ptr(), &mut g) }, CkStatus::Ok);
        assert_eq!(unsafe { ck_graph_node_count(g) }, 2);
        assert_eq!(unsafe { ck_graph_edge_count(g) }, 1);
        let t = c("a.f");
        let mut out = std::ptr::null_mut();
        assert_eq!(unsafe { ck_graph_callers_json(g, t.as_ptr(), &mut out) }, CkStatus::Ok);
        let json: serde_json::Value =
            serde_json::from_str(unsafe { CStr::from_ptr(out) }.to_str().unwrap()).unwrap();
        assert_eq!(json[0]["qname"], "a.g");
        unsafe {
            ck_string_free(out);
            ck_graph_free(g);
        }
        std::fs::remove_dir_all(&dir).unwrap();
        let missing = c("/nonexistent/callerkit");
        let mut g2 = std::ptr::null_mut();
        assert_ne!(unsafe { ck_graph_extract(missing.as_ptr(), &mut g2) }, CkStatus::Ok);
        assert!(g2.is_null());
    }

    fn tempfile_dir() -> std::path::PathBuf {
        let d = std::env::temp_dir().join(format!("callerkit-ffi-{}", std::process::id()));
        std::fs::create_dir_all(&d).unwrap();
        d
    }
}
