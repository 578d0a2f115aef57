#ifndef CALLERKIT_H
#define CALLERKIT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CkStatus {
  CK_STATUS_OK = 0,
  CK_STATUS_NULL_POINTER = 1,
  CK_STATUS_INVALID_UTF8 = 2,
  CK_STATUS_DOMAIN = 3,
  CK_STATUS_IO = 4,
  CK_STATUS_PARSE = 5,
  CK_STATUS_EMPTY_REFERENCE = 6,
  CK_STATUS_PANIC = 7,
} CkStatus;

/**
 * Opaque call graph.
 */
typedef struct CkCallGraph CkCallGraph;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next call into this library on the same thread.
 */
const char *ck_last_error(void);

/**
 * Library version as a static string.
 */
const char *ck_version(void);

/**
 * Release a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` is null or came from this library and was not freed before.
 */
void ck_string_free(char *s);

/**
 * Extract the call graph of the repository at `root`.
 *
 * # Safety
 * `root` is a NUL-terminated path; `out` points to writable storage.
 */
enum CkStatus ck_graph_extract(const char *root, struct CkCallGraph **out);

/**
 * # Safety
 * `g` is null or a handle from [`ck_graph_extract`] not yet freed.
 */
void ck_graph_free(struct CkCallGraph *g);

/**
 * Number of function nodes; 0 for a null handle.
 *
 * # Safety
 * `g` is null or a live handle.
 */
size_t ck_graph_node_count(const struct CkCallGraph *g);

/**
 * Number of call edges; 0 for a null handle.
 *
 * # Safety
 * `g` is null or a live handle.
 */
size_t ck_graph_edge_count(const struct CkCallGraph *g);

/**
 * JSON array of the direct callers of `target` (qname, module path, text).
 *
 * # Safety
 * `g` is a live handle, `target` a NUL-terminated string, `out` writable.
 */
enum CkStatus ck_graph_callers_json(const struct CkCallGraph *g, const char *target, char **out);

/**
 * Unbiased pass@k estimate for `c` correct out of `n` samples.
 *
 * # Safety
 * `out` points to writable storage.
 */
enum CkStatus ck_pass_at_k(size_t n, size_t c, size_t k, double *out);

/**
 * ROUGE-L F1 between candidate and reference code.
 *
 * # Safety
 * Both strings are NUL-terminated; `out` points to writable storage.
 */
enum CkStatus ck_rouge_l(const char *candidate, const char *reference, double *out);

/**
 * CodeBLEU with equal component weights.
 *
 * # Safety
 * Both strings are NUL-terminated; `out` points to writable storage.
 */
enum CkStatus ck_codebleu(const char *candidate, const char *reference, double *out);

/**
 * Serialize a header, `n_callers` caller snippets, and a docstring into the
 * marker template.
 *
 * # Safety
 * `header` and `docstring` are NUL-terminated; `callers` holds `n_callers`
 * NUL-terminated strings (may be null when `n_callers` is 0); `out` is
 * writable.
 */
enum CkStatus ck_serialize(const char *header,
                           const char *const *callers,
                           size_t n_callers,
                           const char *docstring,
                           char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CALLERKIT_H */
