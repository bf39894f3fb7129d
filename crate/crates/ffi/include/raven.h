#ifndef RAVEN_H
#define RAVEN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every call.
typedef enum RavenStatus {
  RAVEN_STATUS_OK = 0,
  RAVEN_STATUS_NULL_POINTER = 1,
  RAVEN_STATUS_INVALID_ARGUMENT = 2,
  RAVEN_STATUS_CONFIG = 3,
  RAVEN_STATUS_BACKEND = 4,
  RAVEN_STATUS_DIMENSION = 5,
  RAVEN_STATUS_NUMERIC = 6,
  RAVEN_STATUS_IO = 7,
  RAVEN_STATUS_SERIALIZATION = 8,
  RAVEN_STATUS_ADAPTER = 9,
  RAVEN_STATUS_PANIC = 10,
} RavenStatus;

// A loaded diffusion backend.
typedef struct RavenBackend RavenBackend;

// An RGB image with values in [0, 1].
typedef struct RavenImage RavenImage;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or null. Valid until the
// next call on the same thread.
const char *raven_last_error_message(void);

// Library version as a static string.
const char *raven_version(void);

// Releases a string produced by this library. Null is ignored.
//
// # Safety
// `s` must come from this library and not have been freed.
void raven_string_free(char *s);

// Loads the backend `name` (`"tiny"` is built in).
//
// # Safety
// `name` must be a valid C string; `out` a writable pointer.
enum RavenStatus raven_backend_load(const char *name, struct RavenBackend **out);

// # Safety
// `b` must come from [`raven_backend_load`] and not have been freed.
void raven_backend_free(struct RavenBackend *b);

// Copies an interleaved 8-bit RGB buffer of `height * width * 3` bytes.
//
// # Safety
// `data` must point to `len` readable bytes; `id` may be null.
enum RavenStatus raven_image_from_rgb8(uintptr_t height,
                                       uintptr_t width,
                                       const uint8_t *data,
                                       uintptr_t len,
                                       const char *id,
                                       struct RavenImage **out);

// # Safety
// `img` must be a live handle; `height` and `width` writable.
enum RavenStatus raven_image_dims(const struct RavenImage *img,
                                  uintptr_t *height,
                                  uintptr_t *width);

// Writes the image as interleaved 8-bit RGB; `len` must be `height * width * 3`.
//
// # Safety
// `img` must be a live handle and `buf` point to `len` writable bytes.
enum RavenStatus raven_image_to_rgb8(const struct RavenImage *img, uint8_t *buf, uintptr_t len);

// # Safety
// `img` must be a live handle or null.
void raven_image_free(struct RavenImage *img);

// Runs the view-shift attack. `config_json` is a RavenConfig object (null
// for defaults). When `trace_json` is non-null it receives the attack trace.
//
// # Safety
// Handles must be live; strings valid C strings or null where allowed.
enum RavenStatus raven_attack(const struct RavenBackend *backend,
                              const struct RavenImage *img,
                              const char *config_json,
                              struct RavenImage **out,
                              char **trace_json);

// Applies a baseline attack given as JSON, e.g. `{"name": "jpeg", "quality": 50}`.
// `backend` may be null for attacks that do not need one.
//
// # Safety
// Handles must be live or null where allowed; `attack_json` a valid C string.
enum RavenStatus raven_apply_attack(const struct RavenBackend *backend,
                                    const struct RavenImage *img,
                                    const char *attack_json,
                                    uint64_t seed,
                                    struct RavenImage **out);

// Generates a key for `scheme` (`dwt_dct`, `dwt_dct_svd` or `fourier_ring`)
// from `seed`. Bitstream schemes take `payload_bits`; the ring takes the
// backend and an image size of `height x width`.
//
// # Safety
// `scheme` must be a valid C string, `out_json` writable; `backend` may be null.
enum RavenStatus raven_key_generate(const struct RavenBackend *backend,
                                    const char *scheme,
                                    uintptr_t payload_bits,
                                    uintptr_t height,
                                    uintptr_t width,
                                    uint64_t seed,
                                    char **out_json);

// Embeds a post-hoc watermark.
//
// # Safety
// `img` must be live, `key_json` a valid C string, `out` writable.
enum RavenStatus raven_embed(const struct RavenImage *img,
                             const char *key_json,
                             struct RavenImage **out);

// Generates a ring-watermarked image at `height x width` from `prompt_seed`.
//
// # Safety
// `backend` must be live, `key_json` a valid C string, `out` writable.
enum RavenStatus raven_generate_ring(const struct RavenBackend *backend,
                                     const char *key_json,
                                     uint64_t prompt_seed,
                                     struct RavenImage **out);

// Scores `img` against a key. `statistic` receives bit accuracy or the ring
// statistic; `detected` (optional) receives 1 if `statistic >= threshold`.
//
// # Safety
// `img` must be live, `key_json` valid, `statistic` writable; `backend` and
// `detected` may be null.
enum RavenStatus raven_detect(const struct RavenBackend *backend,
                              const struct RavenImage *img,
                              const char *key_json,
                              double threshold,
                              double *statistic,
                              int32_t *detected);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RAVEN_H */
