#ifndef KYC_H
#define KYC_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Bumped whenever a signature or status value changes.
#define KYC_ABI_VERSION 1

typedef enum KycStatus {
  KYC_STATUS_OK = 0,
  KYC_STATUS_NULL_ARGUMENT = 1,
  KYC_STATUS_INVALID_UTF8 = 2,
  KYC_STATUS_IO = 3,
  KYC_STATUS_BAD_MAGIC = 4,
  KYC_STATUS_VERSION_MISMATCH = 5,
  KYC_STATUS_TRUNCATED_HEADER = 6,
  KYC_STATUS_TRUNCATED_TENSOR_DATA = 7,
  KYC_STATUS_HEADER_MISMATCH = 8,
  KYC_STATUS_VOCAB_MISMATCH = 9,
  KYC_STATUS_EMPTY_SKETCH = 10,
  KYC_STATUS_UNREGISTERED_CLIENT = 11,
  KYC_STATUS_EMPTY_INSTANCE = 12,
  KYC_STATUS_INVALID_ARGUMENT = 13,
  KYC_STATUS_JSON = 14,
  KYC_STATUS_PANIC = 15,
  KYC_STATUS_INTERNAL = 16,
} KycStatus;

// Opaque handle.
typedef struct KycService KycService;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

uint32_t kyc_abi_version(void);

// Message of the last failed call on this thread, or NULL. The pointer
// stays valid until the next kyc call on the same thread.
const char *kyc_last_error(void);

// Loads a bundle. `registry_path` may be NULL for an in-memory registry;
// otherwise the JSON-lines registry there is replayed and appended to.
//
// # Safety
// String arguments must be NUL-terminated; `out` must be writable.
enum KycStatus kyc_service_open(const char *bundle_path,
                                const char *registry_path,
                                struct KycService **out);

// # Safety
// `svc` must come from `kyc_service_open` and not be used afterwards.
void kyc_service_free(struct KycService *svc);

// Registers a counts payload given as JSON
// (`{"client_id", "vocab_hash", "counts", "total", "n_instances"?}`) and
// returns the content-addressed client id.
//
// # Safety
// Pointers must be valid; `out_client_id` receives a string for `kyc_string_free`.
enum KycStatus kyc_register_json(const struct KycService *svc,
                                 const char *payload_json,
                                 char **out_client_id);

// Registers raw counts over the model vocabulary (`n_counts` must equal
// the vocabulary size). `n_instances` may be 0 when unknown.
//
// # Safety
// `counts` must point to `n_counts` readable values.
enum KycStatus kyc_register_counts(const struct KycService *svc,
                                   const uint64_t *counts,
                                   size_t n_counts,
                                   uint64_t n_instances,
                                   char **out_client_id);

// Predicts for one instance of text. `client_id` may be `"anonymous"`.
// The result is JSON: `{"client_id", "labels": [...], "scores": [[...]]}`.
//
// # Safety
// Pointers must be valid; `out_json` receives a string for `kyc_string_free`.
enum KycStatus kyc_predict(const struct KycService *svc,
                           const char *client_id,
                           const char *text,
                           char **out_json);

// Vocabulary size expected by `kyc_register_counts`, or 0 for NULL.
//
// # Safety
// `svc` must be NULL or a live handle.
size_t kyc_vocab_size(const struct KycService *svc);

// Vocabulary as JSON: `{"words": [...], "vocab_hash": "..."}`.
//
// # Safety
// Pointers must be valid; `out_json` receives a string for `kyc_string_free`.
enum KycStatus kyc_vocab_json(const struct KycService *svc, char **out_json);

// Short content hash of the loaded bundle.
//
// # Safety
// Pointers must be valid; `out` receives a string for `kyc_string_free`.
enum KycStatus kyc_model_version(const struct KycService *svc, char **out);

// # Safety
// `s` must be NULL or a string returned by this library, freed once.
void kyc_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* KYC_H */
