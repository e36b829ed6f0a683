/* Exercises the shared library through its C interface only. */

#include "sonarssl/sonarssl.h"

#include <math.h>
#include <stdio.h>
#include <stdlib.h>
#include <string.h>

static int failures = 0;

#define EXPECT(cond)                                                                  \
    do {                                                                              \
        if (!(cond)) {                                                                \
            fprintf(stderr, "%s:%d: expected %s (last error: %s)\n", __FILE__, __LINE__, \
                    #cond, mj_last_error());                                          \
            ++failures;                                                               \
        }                                                                             \
    } while (0)

static int epochs_seen = 0;

static void on_epoch(int epoch, double loss, double var, double erank, void* user) {
    (void)loss;
    (void)var;
    (void)erank;
    *(int*)user = epoch;
    ++epochs_seen;
}

static void path(char* buf, size_t n, const char* dir, const char* leaf) { snprintf(buf, n, "%s/%s", dir, leaf); }

int main(int argc, char** argv) {
    const char* work = argc > 1 ? argv[1] : "capi_work";
    char corpus[1024], saved[1024], run[1024], ckpt[1024], result[1024], report[1024], buf[1024];
    path(corpus, sizeof corpus, work, "corpus");
    path(saved, sizeof saved, work, "saved");
    path(run, sizeof run, work, "run");
    path(ckpt, sizeof ckpt, run, "final.mjck");
    path(result, sizeof result, work, "results/probe.json");
    path(report, sizeof report, work, "report");

    EXPECT(strlen(mj_version()) > 0);
    EXPECT(strcmp(mj_status_name(MJ_ERR_HASH_MISMATCH), "hash_mismatch") == 0);

    /* error reporting */
    mj_dataset* missing = NULL;
    EXPECT(mj_dataset_load("/nonexistent/sonarssl", &missing) != MJ_OK);
    EXPECT(missing == NULL);
    EXPECT(strlen(mj_last_error()) > 0);
    EXPECT(mj_generate_synthetic(NULL, 1, 1, 0, NULL) == MJ_ERR_INVALID_ARGUMENT);
    mj_encoder* bad = NULL;
    EXPECT(mj_encoder_create("resnet", 0, &bad) == MJ_ERR_INVALID_ARGUMENT);
    EXPECT(strstr(mj_last_error(), "resnet") != NULL);
    double v = 0;
    const double one[1] = {0.0};
    EXPECT(mj_epps_pulley(one, 1, 1, 65, &v, NULL) == MJ_ERR_INVALID_ARGUMENT);
    const double nan_pair[2] = {0.0, NAN};
    EXPECT(mj_epps_pulley(nan_pair, 2, 1, 65, &v, NULL) == MJ_ERR_NON_FINITE);
    EXPECT(mj_pretrain(NULL, "{}", work, NULL, NULL) == MJ_ERR_INVALID_ARGUMENT);

    /* objectives */
    const double zeros[4] = {0, 0, 0, 0};
    EXPECT(mj_epps_pulley(zeros, 4, 1, 0, &v, NULL) == MJ_OK);
    EXPECT(fabs(v - (1.0 - sqrt(2.0) + 1.0 / sqrt(3.0))) < 1e-12);
    const double z[4] = {0, 0, 2, 2}; /* n=1, views=2, dim=2 */
    double total = 0, inv = 0, sig = 0, grad[4];
    EXPECT(mj_combined_loss(z, 1, 2, 2, 0.0, 8, 65, 1, 1, &total, &inv, &sig, grad) == MJ_OK);
    EXPECT(fabs(inv - 2.0) < 1e-12);
    EXPECT(total == inv);
    EXPECT(grad[0] == -1.0 && grad[2] == 1.0);
    EXPECT(mj_combined_loss(z, 1, 2, 2, 2.0, 8, 65, 1, 1, &total, &inv, &sig, NULL) == MJ_ERR_INVALID_ARGUMENT);

    char* text = NULL;
    EXPECT(mj_default_pretrain_config(&text) == MJ_OK);
    EXPECT(text && strstr(text, "\"batch_size\": 1024") != NULL);
    mj_string_free(text);
    EXPECT(mj_augment_preset("natural_image", 2, &text) == MJ_OK);
    EXPECT(text && strstr(text, "natural_image") != NULL);
    mj_string_free(text);
    EXPECT(mj_augment_preset("sepia", 2, &text) == MJ_ERR_INVALID_ARGUMENT);

    /* datasets */
    mj_dataset* ds = NULL;
    EXPECT(mj_generate_synthetic(corpus, 4, 10, 7, &ds) == MJ_OK);
    size_t unlabeled = 0, labeled = 0;
    EXPECT(mj_dataset_counts(ds, &unlabeled, &labeled) == MJ_OK);
    EXPECT(unlabeled == 140);
    EXPECT(labeled == 30);
    EXPECT(mj_dataset_save(ds, saved) == MJ_OK);
    mj_dataset* loaded = NULL;
    EXPECT(mj_dataset_load(saved, &loaded) == MJ_OK);
    const mj_dataset* parts[2] = {ds, loaded};
    mj_dataset* both = NULL;
    EXPECT(mj_dataset_concat(parts, 2, &both) == MJ_OK);
    EXPECT(mj_dataset_counts(both, &unlabeled, &labeled) == MJ_OK);
    EXPECT(unlabeled == 280 && labeled == 60);
    mj_dataset_free(both);
    mj_dataset_free(loaded);

    mj_dataset* extracted = NULL;
    path(buf, sizeof buf, corpus, "images");
    char ann[1024];
    path(ann, sizeof ann, corpus, "annotations.json");
    EXPECT(mj_extract_patches(buf, ann, 96, 64, "synthetic", 3, &extracted) == MJ_OK);
    EXPECT(mj_dataset_counts(extracted, &unlabeled, &labeled) == MJ_OK);
    EXPECT(unlabeled == 140);
    EXPECT(labeled == 6 + 9);
    EXPECT(mj_extract_patches(buf, ann, 96, 64, "infrared", 3, &extracted) == MJ_ERR_INVALID_ARGUMENT);
    mj_dataset_free(extracted);

    /* pretraining */
    const char* cfg =
        "{\"encoder\": {\"arch\": \"toy_conv\"}, \"data_mode\": \"synthetic\", \"batch_size\": 70, \"views\": 2,"
        " \"epochs\": 2, \"diagnostic_patches\": 32, \"loss\": {\"num_slices\": 16}}";
    int last_epoch = 0;
    EXPECT(mj_pretrain(ds, cfg, run, on_epoch, &last_epoch) == MJ_OK);
    EXPECT(last_epoch == 2 && epochs_seen == 2);
    EXPECT(mj_pretrain(ds, "{\"epochz\": 2}", run, NULL, NULL) == MJ_ERR_FORMAT);
    EXPECT(mj_pretrain(ds, "not json", run, NULL, NULL) == MJ_ERR_FORMAT);

    /* encoders */
    mj_encoder* enc = NULL;
    EXPECT(mj_encoder_load(ckpt, &enc) == MJ_OK);
    int fd = 0, pd = 0;
    EXPECT(mj_encoder_dims(enc, &fd, &pd) == MJ_OK);
    EXPECT(fd == 128 && pd == 16);
    int64_t nb = 0, np = 0;
    EXPECT(mj_encoder_param_count(enc, &nb, &np) == MJ_OK);
    EXPECT(nb > 0 && np == 128 * 128 + 128 + 128 * 16 + 16);
    float* pixels = calloc(2 * 3 * 96 * 96, sizeof(float));
    float h[2 * 128], zz[2 * 16];
    EXPECT(mj_encoder_encode(enc, pixels, 2, h, zz) == MJ_OK);
    EXPECT(isfinite(h[0]) && isfinite(zz[31]));
    EXPECT(memcmp(h, h + 128, 128 * sizeof(float)) == 0);
    free(pixels);

    /* probing and reporting */
    double mean = -1, sd = -1;
    EXPECT(mj_probe(enc, ds, "{\"seeds\": [0, 1], \"max_epochs\": 5}", NULL, result, &mean, &sd) == MJ_OK);
    EXPECT(mean >= 0.0 && mean <= 1.0 && sd >= 0.0);
    EXPECT(mj_probe(enc, ds, "{\"seeds\": [0]}", NULL, NULL, NULL, NULL) == MJ_ERR_INVALID_ARGUMENT);
    mj_encoder_free(enc);

    mj_encoder* rnd = NULL;
    EXPECT(mj_encoder_create("toy_conv", 1, &rnd) == MJ_OK);
    path(buf, sizeof buf, work, "results/random.json");
    EXPECT(mj_probe(rnd, ds, "{\"seeds\": [0, 1], \"max_epochs\": 5}", NULL, buf, NULL, NULL) == MJ_OK);
    mj_encoder_free(rnd);

    path(buf, sizeof buf, work, "results");
    EXPECT(mj_report(buf, report) == MJ_OK);
    path(buf, sizeof buf, report, "method_comparison.csv");
    FILE* f = fopen(buf, "r");
    EXPECT(f != NULL);
    if (f) {
        int lines = 0;
        for (int c; (c = fgetc(f)) != EOF;) lines += c == '\n';
        fclose(f);
        EXPECT(lines == 3);
    }
    EXPECT(mj_report("/nonexistent/sonarssl", report) == MJ_ERR_NOT_FOUND);

    mj_dataset_free(ds);
    mj_dataset_free(NULL);
    mj_encoder_free(NULL);

    if (failures) {
        fprintf(stderr, "%d C API check(s) failed\n", failures);
        return 1;
    }
    printf("C API checks passed\n");
    return 0;
}
