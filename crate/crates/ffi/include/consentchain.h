#ifndef CONSENTCHAIN_H
#define CONSENTCHAIN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Result codes. Zero is success.
 */
typedef enum CeStatus {
  CE_STATUS_OK = 0,
  CE_STATUS_NULL_ARGUMENT = 1,
  CE_STATUS_INVALID_UTF8 = 2,
  CE_STATUS_PARSE_ERROR = 3,
  CE_STATUS_CONFLICT = 4,
  CE_STATUS_VALIDATION_FAILED = 5,
  CE_STATUS_UNKNOWN_ID = 6,
  CE_STATUS_TAMPERED = 7,
  CE_STATUS_INCOMPLETE = 8,
  CE_STATUS_DUPLICATE = 9,
  CE_STATUS_LEDGER_ERROR = 10,
  CE_STATUS_REVERTED = 11,
  CE_STATUS_INTERNAL = 12,
} CeStatus;

/*
 Opaque engine handle.
 */
typedef struct CeEngine CeEngine;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Creates an engine. `settings_toml` may be null for defaults; otherwise it
 accepts the same keys as the command-line config file.

 # Safety
 `settings_toml` must be null or a valid NUL-terminated string; `out` must
 be a valid pointer.
 */
enum CeStatus ce_engine_new(const char *settings_toml, struct CeEngine **out);

/*
 Releases an engine. Null is ignored.

 # Safety
 `engine` must be null or a handle from [`ce_engine_new`] not yet freed.
 */
void ce_engine_free(struct CeEngine *engine);

/*
 Moves the logical clock forward to `millis` since the Unix epoch.

 # Safety
 `e` must be a live handle.
 */
enum CeStatus ce_engine_set_time(struct CeEngine *e, uint64_t millis);

/*
 Finalizes an agreement given as JSON. Writes the hex agreement digest to
 `out_h_ppa` when it is non-null.

 # Safety
 Pointers must be valid; `ppa_json` NUL-terminated.
 */
enum CeStatus ce_create_ppa(struct CeEngine *e, const char *ppa_json, char **out_h_ppa);

/*
 Compares an agreement copy with its anchored digest. `out_intact` is set
 to 1 when intact and 0 when tampered.

 # Safety
 Pointers must be valid; strings NUL-terminated.
 */
enum CeStatus ce_verify_ppa(struct CeEngine *e,
                            const char *ppa_id,
                            const char *ppa_json,
                            int32_t *out_intact);

/*
 Deploys an agreement's consents. Writes a JSON array of consent ids.

 # Safety
 Pointers must be valid; `ppa_id` NUL-terminated.
 */
enum CeStatus ce_deploy_consents(struct CeEngine *e, const char *ppa_id, char **out_ids);

/*
 # Safety
 Pointers must be valid; `consent_json` NUL-terminated.
 */
enum CeStatus ce_create_consent(struct CeEngine *e, const char *consent_json);

/*
 # Safety
 Pointers must be valid; strings NUL-terminated.
 */
enum CeStatus ce_alter_consent(struct CeEngine *e, const char *old_id, const char *consent_json);

/*
 # Safety
 Pointers must be valid; `consent_id` NUL-terminated.
 */
enum CeStatus ce_terminate_consent(struct CeEngine *e, const char *consent_id);

/*
 Expires spent consents as of `now_millis`. Writes a JSON array of the
 expired ids.

 # Safety
 Pointers must be valid.
 */
enum CeStatus ce_expire_sweep(struct CeEngine *e, uint64_t now_millis, char **out_ids);

/*
 Decides an access request given as JSON. Sets `out_granted` to 1 or 0
 and, when `out_decision` is non-null, writes the decision as JSON.

 # Safety
 Pointers must be valid; `request_json` NUL-terminated.
 */
enum CeStatus ce_authorize(struct CeEngine *e,
                           const char *request_json,
                           int32_t *out_granted,
                           char **out_decision);

/*
 Granted accesses sealed under `consent_id`.

 # Safety
 Pointers must be valid; `consent_id` NUL-terminated.
 */
enum CeStatus ce_use_count(const struct CeEngine *e, const char *consent_id, uint64_t *out);

/*
 Seals pending transactions. Writes the new head height when `out_height`
 is non-null.

 # Safety
 Pointers must be valid.
 */
enum CeStatus ce_seal(struct CeEngine *e, uint64_t *out_height);

/*
 Verifies the engine's chain. Writes -1 when valid, otherwise the first
 broken height.

 # Safety
 Pointers must be valid.
 */
enum CeStatus ce_verify_chain(const struct CeEngine *e, int64_t *out_broken);

/*
 Verifies a chain dump. Same output convention as [`ce_verify_chain`].

 # Safety
 `dump` must be NUL-terminated; `out_broken` valid.
 */
enum CeStatus ce_verify_dump(const char *dump, int64_t *out_broken);

/*
 Writes the chain dump: one JSON line per block.

 # Safety
 Pointers must be valid.
 */
enum CeStatus ce_chain_dump(const struct CeEngine *e, char **out);

/*
 Runs a provenance query. `orientation` is user, resource, operation or
 condition; `mode` is given or executed. Writes JSON lines, one per row.

 # Safety
 Pointers must be valid; strings NUL-terminated.
 */
enum CeStatus ce_provenance_query(const struct CeEngine *e,
                                  const char *orientation,
                                  const char *key,
                                  const char *mode,
                                  char **out_rows);

/*
 Exports the provenance graph as `dot` or `json`.

 # Safety
 Pointers must be valid; `format` NUL-terminated.
 */
enum CeStatus ce_provenance_export(const struct CeEngine *e, const char *format, char **out);

/*
 Message for the most recent failure on this thread, or an empty string.
 The pointer stays valid until the next failing call on the same thread.
 */
const char *ce_last_error(void);

/*
 Releases a string returned by this library. Null is ignored.

 # Safety
 `s` must be null or a string from this library not yet freed.
 */
void ce_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CONSENTCHAIN_H */
