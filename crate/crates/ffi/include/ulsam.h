#ifndef ULSAM_H
#define ULSAM_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes.
typedef enum UlsamStatus {
  ULSAM_STATUS_OK = 0,
  ULSAM_STATUS_NULL_POINTER = 1,
  ULSAM_STATUS_INVALID_UTF8 = 2,
  ULSAM_STATUS_CONFIG = 3,
  ULSAM_STATUS_DIRECTIVE = 4,
  ULSAM_STATUS_STATE = 5,
  ULSAM_STATUS_DATA = 6,
  ULSAM_STATUS_CHECKPOINT = 7,
  ULSAM_STATUS_IO = 8,
  ULSAM_STATUS_BUFFER_TOO_SMALL = 9,
  ULSAM_STATUS_PANIC = 10,
} UlsamStatus;

// Attention modules known to [`ulsam_attention_overhead`].
typedef enum UlsamAttentionKind {
  ULSAM_ATTENTION_KIND_NON_LOCAL = 0,
  ULSAM_ATTENTION_KIND_A2_NET = 1,
  ULSAM_ATTENTION_KIND_SE_NET = 2,
  ULSAM_ATTENTION_KIND_BAM = 3,
  ULSAM_ATTENTION_KIND_CBAM = 4,
  ULSAM_ATTENTION_KIND_ULSAM = 5,
} UlsamAttentionKind;

// Opaque model handle.
typedef struct UlsamModel UlsamModel;

// Whole-model totals. `macs` counts one multiply-accumulate per kernel tap.
typedef struct UlsamCost {
  uint64_t params;
  uint64_t bn_params;
  uint64_t macs;
  uint64_t attention_macs;
} UlsamCost;

typedef struct UlsamOverhead {
  uint64_t params;
  uint64_t macs;
} UlsamOverhead;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or NULL. The pointer is
// valid until the next failing call on the same thread.
const char *ulsam_last_error(void);

// MobileNet-V1 at width multiplier `alpha`.
enum UlsamStatus ulsam_model_mv1(double alpha,
                                 uint32_t num_classes,
                                 uint64_t seed,
                                 struct UlsamModel **out);

// MobileNet-V2 at width 1.0.
enum UlsamStatus ulsam_model_mv2(uint32_t num_classes, uint64_t seed, struct UlsamModel **out);

// Build from a JSON run configuration (same format as the CLI's `--config`).
enum UlsamStatus ulsam_model_from_config_json(const char *json, struct UlsamModel **out);

// Place ULSAM blocks with `g` groups. `positions` is a comma-separated
// list of `L` (substitute layer L) and `L:1` (insert after layer L). On
// error the model is unchanged.
enum UlsamStatus ulsam_model_apply_ulsam(struct UlsamModel *model,
                                         const char *positions,
                                         uint32_t g);

enum UlsamStatus ulsam_model_num_classes(const struct UlsamModel *model, uint32_t *out);

// Totals for a square `input_size` input.
enum UlsamStatus ulsam_model_cost(const struct UlsamModel *model,
                                  uint32_t input_size,
                                  struct UlsamCost *out);

// Per-layer cost report as JSON. Free the string with
// [`ulsam_string_free`].
enum UlsamStatus ulsam_model_report_json(const struct UlsamModel *model,
                                         uint32_t input_size,
                                         char **out);

// Inference-mode forward of a `(batch, channels, height, width)` f32
// input. Writes `batch × num_classes` logits.
enum UlsamStatus ulsam_model_forward(const struct UlsamModel *model,
                                     const float *input,
                                     size_t batch,
                                     size_t channels,
                                     size_t height,
                                     size_t width,
                                     float *logits,
                                     size_t logits_len);

// Restore parameters and running statistics from a checkpoint file.
enum UlsamStatus ulsam_model_load_checkpoint(struct UlsamModel *model, const char *path);

enum UlsamStatus ulsam_model_save_checkpoint(struct UlsamModel *model, const char *path);

// Release a model. NULL is ignored.
void ulsam_model_free(struct UlsamModel *model);

// Release a string returned by this library. NULL is ignored.
void ulsam_string_free(char *s);

// Overhead of one attention module on an `m × h × w` map. Pass 0 for `t`
// (default m/8) or `r` (default 16) to use the defaults.
enum UlsamStatus ulsam_attention_overhead(enum UlsamAttentionKind kind,
                                          uint64_t m,
                                          uint64_t h,
                                          uint64_t w,
                                          uint64_t t,
                                          uint64_t r,
                                          struct UlsamOverhead *out);

// MACs of a standard `s_k × s_k` convolution from `m` to `n` channels
// producing an `h × w` map.
uint64_t ulsam_flops_sconv(uint64_t s_k, uint64_t m, uint64_t n, uint64_t h, uint64_t w);

// Depthwise and pointwise MACs of a depthwise-separable convolution.
enum UlsamStatus ulsam_flops_dws(uint64_t s_k,
                                 uint64_t m,
                                 uint64_t n,
                                 uint64_t h,
                                 uint64_t w,
                                 uint64_t *depthwise,
                                 uint64_t *pointwise);

// Stateless ULSAM forward on `(batch, channels, height, width)` f32
// features with `groups` subspaces. `dw` and `pw` hold `channels` weights
// each; the output has the input's shape.
enum UlsamStatus ulsam_forward(const float *input,
                               size_t batch,
                               size_t channels,
                               size_t height,
                               size_t width,
                               size_t groups,
                               const float *dw,
                               const float *pw,
                               float *output);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ULSAM_H */
