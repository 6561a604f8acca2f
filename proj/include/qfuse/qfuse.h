/* C interface to the qfuse library. All functions are thread-safe with
 * respect to distinct handles; qf_last_error() is per thread. */
#ifndef QFUSE_QFUSE_H
#define QFUSE_QFUSE_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define QF_API __declspec(dllexport)
#else
#define QF_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum qf_status {
  QF_OK = 0,
  QF_ERR_USAGE = 1,     /* null handle, bad argument */
  QF_ERR_CONFIG = 2,    /* unknown key, bad value, inconsistent settings */
  QF_ERR_DIMENSION = 3, /* tensor shape mismatch */
  QF_ERR_IO = 4,        /* missing or malformed file */
  QF_ERR_VALIDITY = 5,  /* non-finite value */
  QF_ERR_CONTRACT = 6,  /* internal precondition violated */
  QF_ERR_RUNTIME = 7,   /* run finished but failed (flagged variants, gradcheck breach) */
  QF_ERR_INTERNAL = 8
} qf_status;

typedef struct qf_config qf_config;
typedef struct qf_tensor qf_tensor;

/* Receives one line of progress output (no trailing newline). */
typedef void (*qf_log_fn)(const char* line, void* user);

QF_API const char* qf_version(void);
QF_API const char* qf_status_name(qf_status status);
/* Message of the last failing call on this thread; "" when none. */
QF_API const char* qf_last_error(void);

/* ---- configuration ---- */
QF_API qf_status qf_config_create(qf_config** out);
QF_API void qf_config_destroy(qf_config* cfg);
QF_API qf_status qf_config_load_file(qf_config* cfg, const char* path);
QF_API qf_status qf_config_apply_text(qf_config* cfg, const char* text);
/* key is "section.name" or a bare name. */
QF_API qf_status qf_config_set(qf_config* cfg, const char* key, const char* value);
/* Copies the value into buf (NUL-terminated, truncated to buflen); *needed
 * receives the full length including the terminator. */
QF_API qf_status qf_config_get(const qf_config* cfg, const char* key, char* buf, size_t buflen, size_t* needed);
QF_API qf_status qf_config_dump(const qf_config* cfg, char* buf, size_t buflen, size_t* needed);
/* 16 hex digits plus terminator. */
QF_API qf_status qf_config_hash(const qf_config* cfg, char out[17]);
QF_API qf_status qf_config_validate(const qf_config* cfg);

/* ---- runs; artifacts land in out_dir ---- */
QF_API qf_status qf_datagen(const qf_config* cfg, const char* out_dir, qf_log_fn log, void* user);
QF_API qf_status qf_train(const qf_config* cfg, const char* out_dir, qf_log_fn log, void* user);
QF_API qf_status qf_eval(const qf_config* cfg, const char* out_dir, qf_log_fn log, void* user);
/* axis: components | framework | quaternion_axis | quafa_depth | dims | robustness */
QF_API qf_status qf_ablate(const qf_config* cfg, const char* axis, const char* out_dir, qf_log_fn log, void* user);
/* *passed is set to 1 or 0; returns QF_ERR_RUNTIME when an item fails. */
QF_API qf_status qf_gradcheck(uint64_t seed, qf_log_fn log, void* user, int* passed);
/* Summary of a tensor snapshot, point cloud file or checkpoint directory. */
QF_API qf_status qf_inspect(const char* path, qf_log_fn log, void* user);

/* ---- tensors ---- */
typedef struct qf_tensor_stats {
  double min, max, mean, l2; /* over finite entries */
  size_t nonfinite;
} qf_tensor_stats;

QF_API qf_status qf_tensor_create(size_t rank, const size_t* extents, const double* data, qf_tensor** out);
QF_API qf_status qf_tensor_load(const char* path, qf_tensor** out);
QF_API qf_status qf_tensor_save(const qf_tensor* t, const char* path);
QF_API void qf_tensor_destroy(qf_tensor* t);
QF_API size_t qf_tensor_rank(const qf_tensor* t);
QF_API size_t qf_tensor_extent(const qf_tensor* t, size_t axis);
QF_API size_t qf_tensor_numel(const qf_tensor* t);
QF_API const double* qf_tensor_data(const qf_tensor* t);
QF_API qf_status qf_tensor_stats_compute(const qf_tensor* t, qf_tensor_stats* out);

#ifdef __cplusplus
}
#endif

#endif
