/* sonarssl C API.
 *
 * Every function returns an mj_status. On failure mj_last_error() returns a
 * message for the calling thread; it stays valid until the next API call on
 * that thread. Handles are opaque and owned by the caller: release them with
 * the matching *_free function (NULL is accepted).
 */
#ifndef SONARSSL_H
#define SONARSSL_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define MJ_API __declspec(dllexport)
#else
#define MJ_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum mj_status {
    MJ_OK = 0,
    MJ_ERR_INVALID_ARGUMENT = 1,
    MJ_ERR_IO = 2,
    MJ_ERR_FORMAT = 3,
    MJ_ERR_SHAPE_MISMATCH = 4,
    MJ_ERR_NON_FINITE = 5,
    MJ_ERR_NOT_FOUND = 6,
    MJ_ERR_HASH_MISMATCH = 7,
    MJ_ERR_INTERNAL = 100
} mj_status;

typedef struct mj_dataset mj_dataset;
typedef struct mj_encoder mj_encoder;

MJ_API const char* mj_version(void);
MJ_API const char* mj_last_error(void);
MJ_API const char* mj_status_name(mj_status status);

/* Strings returned through char** are heap allocated; release with mj_string_free. */
MJ_API void mj_string_free(char* s);

/* ---- datasets ---- */

/* Renders scenes to out_dir/images, writes out_dir/annotations.json and the
 * dataset to out_dir/dataset. `out` may be NULL. */
MJ_API mj_status mj_generate_synthetic(const char* out_dir, int n_scenes, int n_per_class, uint64_t seed,
                                       mj_dataset** out);

/* subset: "real" or "synthetic". */
MJ_API mj_status mj_extract_patches(const char* images_dir, const char* annotations_file, int window, int stride,
                                    const char* subset, uint64_t split_seed, mj_dataset** out);

MJ_API mj_status mj_dataset_load(const char* dir, mj_dataset** out);
MJ_API mj_status mj_dataset_save(const mj_dataset* ds, const char* dir);
MJ_API mj_status mj_dataset_concat(const mj_dataset* const* parts, size_t count, mj_dataset** out);
MJ_API mj_status mj_dataset_counts(const mj_dataset* ds, size_t* unlabeled, size_t* labeled);
MJ_API void mj_dataset_free(mj_dataset* ds);

/* ---- pretraining ---- */

typedef void (*mj_epoch_callback)(int epoch, double mean_loss, double mean_var, double effective_rank,
                                  void* user);

/* config_json: a pretraining config document (unknown keys rejected; missing
 * keys take defaults). Writes config.json, metrics.ndjson, run.json and
 * checkpoints under out_dir. `callback` may be NULL. */
MJ_API mj_status mj_pretrain(const mj_dataset* ds, const char* config_json, const char* out_dir,
                             mj_epoch_callback callback, void* user);

/* Default pretraining config as JSON. */
MJ_API mj_status mj_default_pretrain_config(char** json_out);

/* Augmentation preset ("sss_adapted" or "natural_image") as a config JSON block. */
MJ_API mj_status mj_augment_preset(const char* name, int n_views, char** json_out);

/* ---- encoders ---- */

/* Randomly initialized encoder; arch: "vit_tiny", "vit_small" or "toy_conv". */
MJ_API mj_status mj_encoder_create(const char* arch, uint64_t seed, mj_encoder** out);
MJ_API mj_status mj_encoder_load(const char* checkpoint_path, mj_encoder** out);
MJ_API mj_status mj_encoder_dims(const mj_encoder* enc, int* feature_dim, int* proj_dim);
MJ_API mj_status mj_encoder_param_count(const mj_encoder* enc, int64_t* backbone, int64_t* projector);
/* pixels: count x 3 x 96 x 96 float32, already normalized. h_out: count x feature_dim,
 * z_out: count x proj_dim; either may be NULL. */
MJ_API mj_status mj_encoder_encode(const mj_encoder* enc, const float* pixels, size_t count, float* h_out,
                                   float* z_out);
MJ_API void mj_encoder_free(mj_encoder* enc);

/* ---- probes ---- */

/* Runs the probe protocol and writes the result document to out_path (may be
 * NULL). representation_json describes the probed backbone (may be NULL).
 * macro_f1_mean / macro_f1_std may be NULL. */
MJ_API mj_status mj_probe(const mj_encoder* enc, const mj_dataset* ds, const char* probe_config_json,
                          const char* representation_json, const char* out_path, double* macro_f1_mean,
                          double* macro_f1_std);

/* ---- report ---- */

/* Tables from every probe result under results_dir, plus one curve image per
 * run directory (holding run.json) found there. */
MJ_API mj_status mj_report(const char* results_dir, const char* out_dir);

/* ---- objectives (double precision, analytic gradients) ---- */

/* closed_form != 0 selects the closed-form statistic, else Gauss-Hermite
 * quadrature with quad_nodes nodes. grad (length n) may be NULL. */
MJ_API mj_status mj_epps_pulley(const double* y, size_t n, int closed_form, int quad_nodes, double* value,
                                double* grad);

/* z: (n * views) x dim row-major, row i*views+v. grad (same shape) may be NULL. */
MJ_API mj_status mj_combined_loss(const double* z, size_t n, size_t views, size_t dim, double lambda,
                                  int num_slices, int quad_nodes, int closed_form, uint64_t slice_seed,
                                  double* total, double* invariance, double* sigreg, double* grad);

#ifdef __cplusplus
}
#endif

#endif
