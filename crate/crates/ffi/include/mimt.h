#ifndef MIMT_H
#define MIMT_H

#pragma once

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Slot value meaning "no token".
 */
#define MIMT_EMPTY 65535

typedef enum MimtStatus {
  MIMT_STATUS_OK = 0,
  MIMT_STATUS_NULL_POINTER = 1,
  MIMT_STATUS_INVALID_ARGUMENT = 2,
  MIMT_STATUS_BUFFER_TOO_SMALL = 3,
  MIMT_STATUS_INDEX_OUT_OF_RANGE = 4,
  MIMT_STATUS_SHAPE = 5,
  MIMT_STATUS_FORMAT = 6,
  MIMT_STATUS_IO = 7,
  MIMT_STATUS_PANIC = 8,
} MimtStatus;

/**
 * Trained residual quantizer.
 */
typedef struct MimtRvq MimtRvq;

/**
 * Contents of a token file.
 */
typedef struct MimtTokenFile MimtTokenFile;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Last error message on this thread, or NULL. Valid until the next call
 * into the library from the same thread.
 */
const char *mimt_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *mimt_version(void);

/**
 * `frame_rate * sum_r log2(sizes[r])`. Returns NaN on a null pointer.
 */
double mimt_bitrate_bps(double frame_rate_hz, const size_t *codebook_sizes, size_t layers);

/**
 * Multi-scale log-mel L1 distance between two equal-length signals.
 */
enum MimtStatus mimt_mel_loss(const double *a,
                              const double *b,
                              size_t len,
                              uint32_t sample_rate,
                              double *out);

/**
 * Loads a codebook checkpoint from disk.
 */
enum MimtStatus mimt_rvq_load(const char *path, struct MimtRvq **out);

/**
 * Parses a codebook checkpoint held in memory.
 */
enum MimtStatus mimt_rvq_from_bytes(const uint8_t *data, size_t len, struct MimtRvq **out);

void mimt_rvq_free(struct MimtRvq *rvq);

/**
 * Vector dimension, 0 for a null handle.
 */
size_t mimt_rvq_dim(const struct MimtRvq *rvq);

/**
 * Number of codebooks, 0 for a null handle.
 */
size_t mimt_rvq_layers(const struct MimtRvq *rvq);

/**
 * Entries in codebook `layer`, 0 if out of range.
 */
size_t mimt_rvq_codebook_size(const struct MimtRvq *rvq, size_t layer);

/**
 * Quantizes `frames` row-major vectors with the first `layers` codebooks.
 * `out_indices` receives `frames * layers` indices.
 */
enum MimtStatus mimt_rvq_quantize(const struct MimtRvq *rvq,
                                  const double *x,
                                  size_t frames,
                                  size_t layers,
                                  uint16_t *out_indices,
                                  size_t out_len);

/**
 * Sums the selected entries. `out` receives `frames * dim` values.
 */
enum MimtStatus mimt_rvq_dequantize(const struct MimtRvq *rvq,
                                    const uint16_t *indices,
                                    size_t frames,
                                    size_t layers,
                                    double *out,
                                    size_t out_len);

/**
 * Rows in the delayed form of a `group`-frame patch: `group + max(delays)`.
 * Returns 0 on invalid delays.
 */
size_t mimt_delayed_len(const size_t *delays, size_t layers, size_t group);

/**
 * Shifts layer `r` of a `group x layers` patch down by `delays[r]` rows.
 * `out` receives `mimt_delayed_len(delays, layers, group) * layers` slots.
 */
enum MimtStatus mimt_delay_apply(const uint16_t *patch,
                                 size_t group,
                                 size_t layers,
                                 const size_t *delays,
                                 uint16_t *out,
                                 size_t out_len);

/**
 * Inverse of [`mimt_delay_apply`]. `rows` must equal the delayed length for
 * `group`; `out` receives `group * layers` slots.
 */
enum MimtStatus mimt_delay_remove(const uint16_t *delayed,
                                  size_t rows,
                                  size_t layers,
                                  const size_t *delays,
                                  size_t group,
                                  uint16_t *out,
                                  size_t out_len);

/**
 * Builds a token file from `frames * layers` row-major slots.
 */
enum MimtStatus mimt_tokens_new(const uint16_t *codebook_sizes,
                                size_t layers,
                                const uint16_t *slots,
                                size_t frames,
                                uint8_t group,
                                struct MimtTokenFile **out);

enum MimtStatus mimt_tokens_read(const char *path, struct MimtTokenFile **out);

enum MimtStatus mimt_tokens_from_bytes(const uint8_t *data, size_t len, struct MimtTokenFile **out);

enum MimtStatus mimt_tokens_write(const struct MimtTokenFile *tokens, const char *path);

void mimt_tokens_free(struct MimtTokenFile *tokens);

size_t mimt_tokens_frames(const struct MimtTokenFile *tokens);

size_t mimt_tokens_layers(const struct MimtTokenFile *tokens);

uint8_t mimt_tokens_group(const struct MimtTokenFile *tokens);

uint16_t mimt_tokens_codebook_size(const struct MimtTokenFile *tokens, size_t layer);

/**
 * Copies the `frames * layers` slots out.
 */
enum MimtStatus mimt_tokens_slots(const struct MimtTokenFile *tokens,
                                  uint16_t *out,
                                  size_t out_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MIMT_H */
