#ifndef STW_H
#define STW_H

#pragma once

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum StwStatus {
  STW_STATUS_OK = 0,
  STW_STATUS_NULL_ARGUMENT = 1,
  STW_STATUS_INVALID_UTF8 = 2,
  STW_STATUS_INVALID_INPUT = 3,
  /**
   * The input parsed but a check on it failed.
   */
  STW_STATUS_VERIFICATION_FAILED = 4,
  STW_STATUS_PANIC = 5,
} StwStatus;

/**
 * Ordered leaves of a Merkle batch under construction.
 */
typedef struct StwBatch StwBatch;

/**
 * Extracted page: canonical text, title and content hash.
 */
typedef struct StwDocument StwDocument;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version, a static string. Do not free.
 */
const char *stw_version(void);

/**
 * Message of the last failure on this thread, or NULL. The caller frees it.
 */
char *stw_last_error(void);

/**
 * Releases a string returned by this library.
 *
 * # Safety
 * `s` must be NULL or a pointer obtained from this library, freed once.
 */
void stw_string_free(char *s);

/**
 * SHA-256 of UTF-8 `text` as 64 hex characters.
 *
 * # Safety
 * `text` must be a NUL-terminated string; `out` must be writable.
 */
enum StwStatus stw_hash_text(const char *text, char **out);

/**
 * Stamp hash from a hex content hash and a Unix time in seconds.
 *
 * # Safety
 * Pointer arguments as for [`stw_hash_text`].
 */
enum StwStatus stw_stamp_hash(const char *content_hash, int64_t unix_secs, char **out);

/**
 * Next chain value from the previous one and a stamp hash.
 *
 * # Safety
 * Pointer arguments as for [`stw_hash_text`].
 */
enum StwStatus stw_chain_extend(const char *prev, const char *stamp_hash, char **out);

/**
 * Base58Check anchor address of a hex Merkle root.
 *
 * # Safety
 * Pointer arguments as for [`stw_hash_text`].
 */
enum StwStatus stw_anchor_address(const char *root, char **out);

/**
 * Checks a receipt JSON document offline. `text` may be NULL to use the
 * receipt's embedded text. Writes the report JSON to `report_out` when it
 * is not NULL. Returns `VERIFICATION_FAILED` for a well-formed receipt that
 * does not verify.
 *
 * # Safety
 * `receipt_json` and a non-NULL `text` must be NUL-terminated strings.
 */
enum StwStatus stw_verify_receipt(const char *receipt_json, const char *text, char **report_out);

/**
 * Word-level diff script between two texts, as JSON.
 *
 * # Safety
 * Pointer arguments as for [`stw_hash_text`].
 */
enum StwStatus stw_diff(const char *old, const char *new_, char **out);

/**
 * Extracts the article from `len` bytes of HTML. `charset` may be NULL.
 *
 * # Safety
 * `html` must point to `len` readable bytes; `url` and a non-NULL `charset`
 * must be NUL-terminated; `out` must be writable.
 */
enum StwStatus stw_document_extract(const uint8_t *html,
                                    size_t len,
                                    const char *charset,
                                    const char *url,
                                    struct StwDocument **out);

/**
 * # Safety
 * `doc` must be a live handle from [`stw_document_extract`].
 */
enum StwStatus stw_document_text(const struct StwDocument *doc, char **out);

/**
 * # Safety
 * `doc` must be a live handle from [`stw_document_extract`].
 */
enum StwStatus stw_document_title(const struct StwDocument *doc, char **out);

/**
 * # Safety
 * `doc` must be a live handle from [`stw_document_extract`].
 */
enum StwStatus stw_document_content_hash(const struct StwDocument *doc, char **out);

/**
 * # Safety
 * `doc` must be NULL or a handle from [`stw_document_extract`], freed once.
 */
void stw_document_free(struct StwDocument *doc);

struct StwBatch *stw_batch_new(void);

/**
 * Appends a hex leaf.
 *
 * # Safety
 * `batch` must be a live handle; `leaf` a NUL-terminated string.
 */
enum StwStatus stw_batch_push(struct StwBatch *batch, const char *leaf);

/**
 * # Safety
 * `batch` must be NULL or a live handle.
 */
size_t stw_batch_len(const struct StwBatch *batch);

/**
 * Hex Merkle root; fails on an empty batch.
 *
 * # Safety
 * `batch` must be a live handle; `out` must be writable.
 */
enum StwStatus stw_batch_root(struct StwBatch *batch, char **out);

/**
 * Inclusion proof for the leaf at `index`, as JSON.
 *
 * # Safety
 * `batch` must be a live handle; `out` must be writable.
 */
enum StwStatus stw_batch_proof(struct StwBatch *batch, size_t index, char **out);

/**
 * # Safety
 * `batch` must be NULL or a handle from [`stw_batch_new`], freed once.
 */
void stw_batch_free(struct StwBatch *batch);

/**
 * Checks an inclusion proof JSON document. `VERIFICATION_FAILED` when the
 * path does not lead to the stated root.
 *
 * # Safety
 * `proof_json` must be a NUL-terminated string.
 */
enum StwStatus stw_verify_proof(const char *proof_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* STW_H */
